//! Receding-horizon solve: alternate between freezing the trajectory to
//! query dual distances and minimizing tracking cost plus hinge-squared
//! collision penalties by projected gradient over the control sequence.

use nalgebra::{Vector2, Vector3};

use super::astar::ReferencePath;
use super::kinematics::{kinematics_step, Control};
use crate::dualdist::{dual_objective_pose_gradient, DistanceEngine, DualDistError};
use crate::geometry::normalize_angle;
use crate::{Pose2, RobotPolytope};

#[derive(Clone, Debug)]
pub struct PlannerParams {
    pub horizon: usize,
    pub dt: f64,
    pub u_min: Control,
    pub u_max: Control,
    pub d_min: f64,
    pub polytope: RobotPolytope,
    pub max_outer_iters: usize,
    pub convergence_tol: f64,
    pub penalty_weight_init: f64,
    pub penalty_growth: f64,
    pub k_nearest: usize,
    pub speed_fraction: f64,
    pub max_inner_iters: usize,
    pub goal_tolerance: f64,
    /// Extra planning margin above `d_min`: the hinge activates early so the
    /// residual penalty violation never eats into the safety distance.
    pub penalty_buffer: f64,
    /// Gentle standoff for contactable points: a weak hinge that keeps
    /// incidental passes from grazing movable obstacles without ever
    /// forbidding contact (interior points carry no gradient).
    pub soft_margin: f64,
    pub soft_weight: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 15,
            dt: 0.1,
            u_min: Control { v: -0.4, psi: -1.5 },
            u_max: Control { v: 1.0, psi: 1.5 },
            d_min: 0.05,
            polytope: RobotPolytope::rectangle(0.322, 0.220).expect("default chassis"),
            max_outer_iters: 6,
            convergence_tol: 1e-3,
            penalty_weight_init: 30.0,
            penalty_growth: 2.5,
            k_nearest: 100,
            speed_fraction: 1.0,
            max_inner_iters: 60,
            goal_tolerance: 0.15,
            penalty_buffer: 0.03,
            soft_margin: 0.06,
            soft_weight: 5.0,
        }
    }
}

impl PlannerParams {
    pub fn step_travel(&self) -> f64 {
        self.u_max.v * self.dt * self.speed_fraction
    }
}

#[derive(Clone, Debug)]
pub struct HorizonPlan {
    /// H+1 poses; `states[0]` is the current robot state.
    pub states: Vec<Pose2>,
    pub controls: Vec<Control>,
    /// Engine min-distance per planned step (states 1..=H).
    pub predicted_min_distances: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Penalized objective sequence per outer iteration.
    pub objective_trace: Vec<Vec<f64>>,
}

/// Reference targets for each horizon step: project the current state onto
/// the path by arc length, then space targets by expected per-step travel.
pub fn horizon_targets(
    current: &Pose2,
    reference: &ReferencePath,
    steps: usize,
    step_travel: f64,
) -> Vec<Vector2<f64>> {
    let s0 = reference.project(current.position());
    (1..=steps)
        .map(|h| reference.point_at(s0 + h as f64 * step_travel))
        .collect()
}

/// Sum of squared position deviations from the arc-length matched targets.
pub fn tracking_cost(states: &[Pose2], reference: &ReferencePath, step_travel: f64) -> f64 {
    let targets = horizon_targets(&states[0], reference, states.len() - 1, step_travel);
    states[1..]
        .iter()
        .zip(&targets)
        .map(|(s, t)| (s.position() - t).norm_squared())
        .sum()
}

fn rollout(current: &Pose2, controls: &[Control], dt: f64) -> Vec<Pose2> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*current);
    for &u in controls {
        states.push(kinematics_step(states.last().unwrap(), u, dt));
    }
    states
}

/// K nearest fixed points to a position (by center distance), deterministic
/// under ties.
pub fn k_nearest(points: &[Vector2<f64>], center: Vector2<f64>, k: usize) -> Vec<Vector2<f64>> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - center).norm_squared(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.iter().take(k).map(|&(_, i)| points[i]).collect()
}

struct LinearizedPoint {
    base_distance: f64,
    gradient: Vector3<f64>,
    base_pose: Pose2,
}

fn pose_delta(s: &Pose2, base: &Pose2) -> Vector3<f64> {
    Vector3::new(
        s.x - base.x,
        s.y - base.y,
        normalize_angle(s.theta - base.theta),
    )
}

struct PenaltyGroup<'a> {
    lin: &'a [Vec<LinearizedPoint>],
    weight: f64,
    margin: f64,
}

fn penalized_objective(
    current: &Pose2,
    controls: &[Control],
    targets: &[Vector2<f64>],
    groups: &[PenaltyGroup<'_>],
    dt: f64,
) -> (f64, Vec<Pose2>) {
    let states = rollout(current, controls, dt);
    let mut cost = 0.0;
    for (h, s) in states[1..].iter().enumerate() {
        cost += (s.position() - targets[h]).norm_squared();
        for g in groups {
            for c in &g.lin[h] {
                let d_hat = c.base_distance + c.gradient.dot(&pose_delta(s, &c.base_pose));
                let violation = (g.margin - d_hat).max(0.0);
                cost += g.weight * violation * violation;
            }
        }
    }
    (cost, states)
}

fn objective_gradient(
    current: &Pose2,
    controls: &[Control],
    targets: &[Vector2<f64>],
    groups: &[PenaltyGroup<'_>],
    dt: f64,
) -> Vec<Control> {
    let states = rollout(current, controls, dt);
    let h_count = controls.len();

    // Direct cost gradients per state 1..=H.
    let mut state_grads = vec![Vector3::new(0.0, 0.0, 0.0); h_count + 1];
    for h in 1..=h_count {
        let s = &states[h];
        let mut g = Vector3::new(
            2.0 * (s.x - targets[h - 1].x),
            2.0 * (s.y - targets[h - 1].y),
            0.0,
        );
        for grp in groups {
            for c in &grp.lin[h - 1] {
                let d_hat = c.base_distance + c.gradient.dot(&pose_delta(s, &c.base_pose));
                let violation = (grp.margin - d_hat).max(0.0);
                if violation > 0.0 {
                    g -= c.gradient * (2.0 * grp.weight * violation);
                }
            }
        }
        state_grads[h] = g;
    }

    // Adjoint backward pass through the unicycle chain.
    let mut grad_u = vec![Control::ZERO; h_count];
    let mut lambda = state_grads[h_count];
    for h in (0..h_count).rev() {
        let theta = states[h].theta;
        let (sin_t, cos_t) = theta.sin_cos();
        let v = controls[h].v;
        // B_h' lambda_{h+1}.
        grad_u[h] = Control {
            v: dt * (cos_t * lambda.x + sin_t * lambda.y),
            psi: dt * lambda.z,
        };
        if h > 0 {
            // lambda_h = c_h + A_h' lambda_{h+1}.
            let a_t_lambda = Vector3::new(
                lambda.x,
                lambda.y,
                lambda.z + dt * v * (-sin_t * lambda.x + cos_t * lambda.y),
            );
            lambda = state_grads[h] + a_t_lambda;
        }
    }
    grad_u
}

fn clamp_controls(controls: &mut [Control], params: &PlannerParams) {
    for u in controls {
        *u = u.clamp(params.u_min, params.u_max);
    }
}

/// Retreat along the distance gradient when the current state already
/// violates the margin; flagged not-converged.
fn retreat_plan(
    current: &Pose2,
    near: &[Vector2<f64>],
    params: &PlannerParams,
    engine: &DistanceEngine<f64>,
) -> Result<HorizonPlan, DualDistError> {
    let (_, idx) = engine.min_distance(current, near)?;
    let control = if let Some(idx) = idx {
        let queries = engine.query(current, &near[idx..=idx])?;
        let grad = dual_objective_pose_gradient(&queries[0].pair, engine.polytope(), current, near[idx]);
        let dir = Vector2::new(grad.x, grad.y);
        let n = dir.norm();
        if n < 1e-9 {
            Control::ZERO
        } else {
            let dir = dir / n;
            let heading = Vector2::new(current.theta.cos(), current.theta.sin());
            let along = dir.dot(&heading);
            let v = (0.5 * along).clamp(params.u_min.v, params.u_max.v);
            let target_heading = if along >= 0.0 {
                dir.y.atan2(dir.x)
            } else {
                (-dir.y).atan2(-dir.x)
            };
            let err = normalize_angle(target_heading - current.theta);
            Control {
                v,
                psi: (2.0 * err).clamp(params.u_min.psi, params.u_max.psi),
            }
        }
    } else {
        Control::ZERO
    };
    let controls = vec![control; params.horizon];
    let states = rollout(current, &controls, params.dt);
    let mut predicted = Vec::with_capacity(params.horizon);
    for s in &states[1..] {
        let pts = k_nearest(near, s.position(), params.k_nearest);
        predicted.push(engine.min_distance(s, &pts)?.0);
    }
    Ok(HorizonPlan {
        states,
        controls,
        predicted_min_distances: predicted,
        converged: false,
        iterations: 0,
        objective_trace: Vec::new(),
    })
}

/// Alternating receding-horizon solve; see the module docs. The returned
/// plan always satisfies the hard invariants (clamped controls, exact state
/// chaining) regardless of convergence.
pub fn solve_horizon(
    current: &Pose2,
    fixed_points: &[Vector2<f64>],
    reference: &ReferencePath,
    params: &PlannerParams,
    engine: &DistanceEngine<f64>,
    warm_start: Option<&HorizonPlan>,
) -> Result<HorizonPlan, DualDistError> {
    solve_horizon_soft(current, fixed_points, &[], reference, params, engine, warm_start)
}

/// [`solve_horizon`] with an additional soft standoff over contactable
/// points.
pub fn solve_horizon_soft(
    current: &Pose2,
    fixed_points: &[Vector2<f64>],
    soft_points: &[Vector2<f64>],
    reference: &ReferencePath,
    params: &PlannerParams,
    engine: &DistanceEngine<f64>,
    warm_start: Option<&HorizonPlan>,
) -> Result<HorizonPlan, DualDistError> {
    let h_count = params.horizon;
    let margin = params.d_min + engine.safety_margin() + params.penalty_buffer;
    let targets = horizon_targets(current, reference, h_count, params.step_travel());

    let near_current = k_nearest(fixed_points, current.position(), params.k_nearest);
    if !near_current.is_empty() {
        let (d0, _) = engine.min_distance(current, &near_current)?;
        if d0 < params.d_min + engine.safety_margin() {
            return retreat_plan(current, &near_current, params, engine);
        }
    }

    let mut controls: Vec<Control> = match warm_start {
        Some(prev) if prev.controls.len() == h_count => {
            let mut shifted: Vec<Control> = prev.controls[1..].to_vec();
            shifted.push(*prev.controls.last().unwrap());
            shifted
        }
        // Cold start: arc toward the reference at the target speed, so the
        // descent starts in the basin that follows the path.
        _ => {
            let look = reference.point_at(
                reference.project(current.position()) + 4.0 * params.step_travel(),
            );
            let to_path = look - current.position();
            let err = if to_path.norm() > 1e-6 {
                normalize_angle(to_path.y.atan2(to_path.x) - current.theta)
            } else {
                0.0
            };
            let psi = (err / (3.0 * params.dt)).clamp(params.u_min.psi, params.u_max.psi);
            let v = params.u_max.v * params.speed_fraction * err.cos().max(0.2);
            vec![Control { v, psi }; h_count]
        }
    };
    clamp_controls(&mut controls, params);

    let mut weight = params.penalty_weight_init;
    let mut converged = false;
    let mut iterations = 0;
    let mut objective_trace = Vec::new();
    let mut states = rollout(current, &controls, params.dt);

    for _outer in 0..params.max_outer_iters {
        iterations += 1;
        // (a) trajectory frozen: query duals for the nearest points per step.
        let mut soft_lin: Vec<Vec<LinearizedPoint>> = Vec::with_capacity(h_count);
        for s in states[1..].iter() {
            let pts = k_nearest(soft_points, s.position(), params.k_nearest.min(40));
            let queries = engine.query(s, &pts)?;
            soft_lin.push(
                queries
                    .iter()
                    .zip(&pts)
                    .filter(|(q, _)| q.distance > 1e-6)
                    .map(|(q, &p)| LinearizedPoint {
                        base_distance: q.distance,
                        gradient: dual_objective_pose_gradient(&q.pair, engine.polytope(), s, p),
                        base_pose: *s,
                    })
                    .collect(),
            );
        }
        let mut lin: Vec<Vec<LinearizedPoint>> = Vec::with_capacity(h_count);
        for (h, s) in states[1..].iter().enumerate() {
            let pts = k_nearest(fixed_points, s.position(), params.k_nearest);
            let queries = engine.query(s, &pts)?;
            // Interior optimum is flat (zero duals); penetrated states get a
            // slope pushing back along the motion that caused the contact,
            // so a trajectory can never pay its way through an obstacle.
            let motion = s.position() - states[h].position();
            let retreat = {
                let n = motion.norm();
                if n > 1e-9 {
                    Vector3::new(-motion.x / n, -motion.y / n, 0.0)
                } else {
                    let heading = Vector2::new(s.theta.cos(), s.theta.sin());
                    Vector3::new(-heading.x, -heading.y, 0.0)
                }
            };
            let body_radius = engine.polytope().circumradius();
            lin.push(
                queries
                    .iter()
                    .zip(&pts)
                    .map(|(q, &p)| {
                        if q.distance <= 1e-6 {
                            // Depth proxy from the center distance so one
                            // linearization demands the full backout.
                            let depth = (body_radius - (s.position() - p).norm()).max(0.0);
                            LinearizedPoint {
                                base_distance: -depth,
                                gradient: retreat,
                                base_pose: *s,
                            }
                        } else {
                            LinearizedPoint {
                                base_distance: q.distance,
                                gradient: dual_objective_pose_gradient(
                                    &q.pair,
                                    engine.polytope(),
                                    s,
                                    p,
                                ),
                                base_pose: *s,
                            }
                        }
                    })
                    .collect(),
            );
        }

        // (b) duals frozen: projected gradient descent over the controls.
        let groups = [
            PenaltyGroup {
                lin: &lin,
                weight,
                margin,
            },
            PenaltyGroup {
                lin: &soft_lin,
                weight: params.soft_weight,
                margin: params.soft_margin,
            },
        ];
        let (mut j_prev, _) =
            penalized_objective(current, &controls, &targets, &groups, params.dt);
        let mut js = vec![j_prev];
        let mut step = 0.05;
        for _inner in 0..params.max_inner_iters {
            let grad = objective_gradient(current, &controls, &targets, &groups, params.dt);
            let gnorm2: f64 = grad.iter().map(|g| g.v * g.v + g.psi * g.psi).sum();
            if gnorm2 < 1e-14 {
                break;
            }
            let mut accepted = false;
            let mut t = step;
            for _bt in 0..24 {
                let mut cand: Vec<Control> = controls
                    .iter()
                    .zip(&grad)
                    .map(|(u, g)| Control {
                        v: u.v - t * g.v,
                        psi: u.psi - t * g.psi,
                    })
                    .collect();
                clamp_controls(&mut cand, params);
                let (j_new, _) =
                    penalized_objective(current, &cand, &targets, &groups, params.dt);
                if j_new < j_prev - 1e-12 {
                    controls = cand;
                    j_prev = j_new;
                    js.push(j_new);
                    step = (t * 1.5).min(0.2);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        objective_trace.push(js);

        let new_states = rollout(current, &controls, params.dt);
        let change = states
            .iter()
            .zip(&new_states)
            .map(|(a, b)| a.delta_norm(b))
            .fold(0.0f64, f64::max);
        states = new_states;
        if change < params.convergence_tol {
            converged = true;
            break;
        }
        weight = (weight * params.penalty_growth).min(1e4);
    }

    let mut predicted = Vec::with_capacity(h_count);
    for s in &states[1..] {
        let pts = k_nearest(fixed_points, s.position(), params.k_nearest);
        predicted.push(engine.min_distance(s, &pts)?.0);
    }

    Ok(HorizonPlan {
        states,
        controls,
        predicted_min_distances: predicted,
        converged,
        iterations,
        objective_trace,
    })
}
