//! Receding-horizon navigation over direct point constraints: global
//! reference, alternating horizon solve, stuck detection, and the
//! point-correcting recovery loop.

mod astar;
mod correction;
mod horizon;
mod kinematics;

pub use astar::{astar_reference, AstarError, Grid, ReferencePath};
pub use correction::{
    detect_stuck, relabel_failure_cluster, reverse_control, CorrectionConfig, StateHistory,
};
pub use horizon::{
    horizon_targets, k_nearest, solve_horizon, solve_horizon_soft, tracking_cost, HorizonPlan,
    PlannerParams,
};
pub use kinematics::{kinematics_step, Control};

use std::collections::HashSet;

use nalgebra::Vector2;

use crate::dualdist::{solve_dual_exact, DistanceEngine, DualDistError};
use crate::partition::PartitionedScan;
use crate::Pose2;

/// Navigation events surfaced into the episode trace.
#[derive(Clone, Debug, PartialEq)]
pub enum NavEvent {
    Replanned,
    ReplanFailed,
    Unreachable,
    StuckDetected { denied: Vec<u32>, relabeled: usize },
    ReversalComplete,
    GovernorLimited,
    Retreating,
}

/// One navigation decision.
#[derive(Clone, Debug)]
pub struct NavStep {
    pub control: Control,
    pub events: Vec<NavEvent>,
    /// Partition after failure relabeling, when a correction fired.
    pub corrected_partition: Option<PartitionedScan>,
    /// Episode-fatal: no reference path can be found.
    pub failed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Normal,
    Reversing,
}

/// Owns the planner state for one episode: reference path, warm-started
/// plan, state history, deny list, and the correction state machine.
pub struct Navigator {
    pub params: PlannerParams,
    pub correction: CorrectionConfig,
    engine: DistanceEngine<f64>,
    history: StateHistory,
    deny: HashSet<u32>,
    reference: Option<ReferencePath>,
    prev_plan: Option<HorizonPlan>,
    phase: Phase,
    reverse_targets: Vec<Pose2>,
    last_commanded_v: f64,
    consecutive_replan_failures: usize,
    steps_since_replan: usize,
    low_progress_steps: usize,
    /// Positions where recovery fired; routed around as virtual obstacles.
    wedge_points: Vec<Vector2<f64>>,
    pub grid_resolution: f64,
    pub inflation: f64,
    /// Cleared after each stuck event so one contact triggers one correction.
    eps_cluster: f64,
}

const REPLAN_FAILURE_LIMIT: usize = 3;
const REVERSE_POS_TOL: f64 = 0.05;
const REVERSE_ANGLE_TOL: f64 = 0.15;
/// Routes re-optimize periodically as occluded regions come into view.
const REPLAN_PERIOD_STEPS: usize = 8;

impl Navigator {
    pub fn new(
        params: PlannerParams,
        correction: CorrectionConfig,
        engine: DistanceEngine<f64>,
        eps_cluster: f64,
    ) -> Self {
        let capacity = correction.traceback + correction.tau_stuck + 8;
        Self {
            params,
            correction,
            engine,
            history: StateHistory::with_capacity(capacity),
            deny: HashSet::new(),
            reference: None,
            prev_plan: None,
            phase: Phase::Normal,
            reverse_targets: Vec::new(),
            last_commanded_v: 0.0,
            consecutive_replan_failures: 0,
            steps_since_replan: 0,
            low_progress_steps: 0,
            wedge_points: Vec::new(),
            grid_resolution: 0.05,
            inflation: 0.25,
            eps_cluster,
        }
    }

    pub fn deny_list(&self) -> &HashSet<u32> {
        &self.deny
    }

    pub fn reference(&self) -> Option<&ReferencePath> {
        self.reference.as_ref()
    }

    pub fn is_reversing(&self) -> bool {
        self.phase == Phase::Reversing
    }

    /// Exact min distance from the chassis to a point set (independent of
    /// the configured engine; this is the post-check path).
    pub fn exact_min_distance(&self, pose: &Pose2, points: &[Vector2<f64>]) -> f64 {
        let near = k_nearest(points, pose.position(), 256);
        near.iter()
            .map(|&p| {
                solve_dual_exact(&self.params.polytope, pose, p, 1e-8)
                    .map(|s| s.objective)
                    .unwrap_or(f64::INFINITY)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// One decision cycle. `failed_contact_ids` are obstacles that refused
    /// to yield in the most recent world step.
    pub fn plan_step(
        &mut self,
        now: f64,
        pose: &Pose2,
        partition: &PartitionedScan,
        goal: &Pose2,
        bounds: (Vector2<f64>, Vector2<f64>),
        failed_contact_ids: &[u32],
    ) -> Result<NavStep, DualDistError> {
        let frozen = self
            .history
            .last_pose()
            .map_or(false, |prev| pose.delta_norm(&prev) <= self.correction.d_stuck);
        self.history.push(now, *pose, self.last_commanded_v);
        let mut events = Vec::new();

        if self.phase == Phase::Reversing {
            while let Some(target) = self.reverse_targets.first() {
                let pos_ok = pose.distance_xy(target) <= REVERSE_POS_TOL;
                let ang_ok =
                    crate::geometry::normalize_angle(pose.theta - target.theta).abs()
                        <= REVERSE_ANGLE_TOL;
                if pos_ok && ang_ok {
                    self.reverse_targets.remove(0);
                } else {
                    break;
                }
            }
            if let Some(target) = self.reverse_targets.first() {
                let u = reverse_control(
                    pose,
                    target,
                    &self.correction,
                    self.params.u_min,
                    self.params.u_max,
                    self.params.dt,
                );
                self.last_commanded_v = u.v;
                return Ok(NavStep {
                    control: u,
                    events,
                    corrected_partition: None,
                    failed: false,
                });
            }
            // Checkpoint reached: replan against the corrected labels.
            self.phase = Phase::Normal;
            self.reference = None;
            self.prev_plan = None;
            self.history.clear();
            events.push(NavEvent::ReversalComplete);
        }

        // Stuck detection (normal phase only). A commanded push that moves
        // nothing is the primary trigger; a governor freeze (near-zero
        // commands without progress) is caught by the zero-progress
        // watchdog and funneled into the same recovery.
        if frozen && pose.distance_xy(goal) > 2.0 * self.params.goal_tolerance {
            self.low_progress_steps += 1;
        } else {
            self.low_progress_steps = 0;
        }
        let watchdog = self.low_progress_steps >= 2 * self.correction.tau_stuck;
        let mut corrected_partition = None;
        if watchdog || detect_stuck(&self.history, &self.correction) {
            self.low_progress_steps = 0;
            if watchdog {
                // A freeze without failed contacts: remember the spot and
                // route around it after the retreat. A small cluster widens
                // the routing footprint beyond one inflation radius.
                let c = pose.position();
                for (dx, dy) in [(0.0, 0.0), (0.2, 0.0), (-0.2, 0.0), (0.0, 0.2), (0.0, -0.2)] {
                    self.wedge_points.push(Vector2::new(c.x + dx, c.y + dy));
                }
            }
            let denied: Vec<u32> = failed_contact_ids
                .iter()
                .copied()
                .filter(|id| self.deny.insert(*id))
                .collect();
            let (updated, relabeled) = relabel_failure_cluster(
                partition,
                pose,
                &self.params.polytope,
                self.eps_cluster,
                self.correction.contact_radius,
            );
            corrected_partition = Some(updated);
            events.push(NavEvent::StuckDetected { denied, relabeled });
            self.reverse_targets = self.history.reverse_targets(self.correction.traceback);
            if self.reverse_targets.len() < 3 {
                // History is all stall: back straight out instead.
                let back = Vector2::new(-pose.theta.cos(), -pose.theta.sin());
                self.reverse_targets = (1..=8)
                    .map(|k| {
                        let p = pose.position() + back * (0.1 * k as f64);
                        Pose2::new(p.x, p.y, pose.theta)
                    })
                    .collect();
            }
            self.phase = Phase::Reversing;
            self.prev_plan = None;
            let control = match self.reverse_targets.first() {
                Some(target) => reverse_control(
                    pose,
                    target,
                    &self.correction,
                    self.params.u_min,
                    self.params.u_max,
                    self.params.dt,
                ),
                None => Control::ZERO,
            };
            self.last_commanded_v = control.v;
            return Ok(NavStep {
                control,
                events,
                corrected_partition,
                failed: false,
            });
        }

        let partition = corrected_partition.as_ref().unwrap_or(partition);
        let fixed = partition.fixed_xy();
        let movable = partition.movable_xy();

        // Reference upkeep. Recovery wedges count as routing obstacles.
        let mut routing = fixed.clone();
        routing.extend(self.wedge_points.iter().copied());
        self.steps_since_replan += 1;
        if self.needs_replan(pose, goal, &routing) {
            // Wedge sites are routing preferences: when honoring them leaves
            // no path, fall back to the true fixed set.
            let attempt = astar_reference(
                &routing,
                bounds.0,
                bounds.1,
                self.grid_resolution,
                pose,
                goal,
                self.inflation,
            )
            .or_else(|_| {
                astar_reference(
                    &fixed,
                    bounds.0,
                    bounds.1,
                    self.grid_resolution,
                    pose,
                    goal,
                    self.inflation,
                )
            });
            match attempt {
                Ok(path) => {
                    self.reference = Some(smooth_reference(
                        &path,
                        &routing,
                        self.inflation,
                        self.grid_resolution,
                    ));
                    self.consecutive_replan_failures = 0;
                    self.steps_since_replan = 0;
                    events.push(NavEvent::Replanned);
                }
                Err(_) => {
                    self.consecutive_replan_failures += 1;
                    events.push(NavEvent::ReplanFailed);
                    if self.consecutive_replan_failures >= REPLAN_FAILURE_LIMIT {
                        events.push(NavEvent::Unreachable);
                        self.last_commanded_v = 0.0;
                        return Ok(NavStep {
                            control: Control::ZERO,
                            events,
                            corrected_partition,
                            failed: true,
                        });
                    }
                    if self.reference.is_none() {
                        // Hold still until a path exists.
                        self.last_commanded_v = 0.0;
                        return Ok(NavStep {
                            control: Control::ZERO,
                            events,
                            corrected_partition,
                            failed: false,
                        });
                    }
                }
            }
        }
        let reference = self.reference.as_ref().expect("reference exists here");

        let plan = solve_horizon_soft(
            pose,
            &fixed,
            &movable,
            reference,
            &self.params,
            &self.engine,
            self.prev_plan.as_ref(),
        )?;
        if !plan.converged && plan.iterations == 0 {
            events.push(NavEvent::Retreating);
        }
        let mut control = plan.controls[0];
        // A converged plan that goes nowhere while the goal is far is a
        // local minimum; drop the warm start so the next solve re-seeds
        // along the reference.
        let horizon_reach = self.params.step_travel() * self.params.horizon as f64;
        let stalled = plan
            .states
            .last()
            .map_or(false, |end| pose.distance_xy(end) < 0.35 * horizon_reach)
            && pose.distance_xy(goal) > 0.5;
        self.prev_plan = if stalled { None } else { Some(plan) };

        // Safety governor: post-check the executed control against the exact
        // solver and scale down until the next state keeps the margin.
        let near = k_nearest(&fixed, pose.position(), 256);
        if !near.is_empty() {
            let d_now = self.exact_min_distance(pose, &near);
            let floor = self.params.d_min.min(d_now) - 1e-9;
            let mut chosen = Control::ZERO;
            let candidates = [
                (1.0, 1.0),
                (0.5, 0.5),
                (0.25, 0.25),
                (0.125, 0.125),
                (0.0625, 0.0625),
                // Translation-only fallbacks: rotation sweeps the corners,
                // which can be what violates the margin.
                (0.5, 0.0),
                (0.25, 0.0),
                (0.125, 0.0),
            ];
            for (sv, sp) in candidates {
                let cand = Control {
                    v: control.v * sv,
                    psi: control.psi * sp,
                };
                let next = kinematics_step(pose, cand, self.params.dt);
                if self.exact_min_distance(&next, &near) >= floor {
                    chosen = cand;
                    break;
                }
            }
            if chosen != control {
                events.push(NavEvent::GovernorLimited);
            }
            control = chosen;
        }

        self.last_commanded_v = control.v;
        Ok(NavStep {
            control,
            events,
            corrected_partition,
            failed: false,
        })
    }

    fn needs_replan(&self, pose: &Pose2, goal: &Pose2, fixed: &[Vector2<f64>]) -> bool {
        let Some(reference) = self.reference.as_ref() else {
            return true;
        };
        if self.steps_since_replan >= REPLAN_PERIOD_STEPS {
            return true;
        }
        if (reference.end() - goal.position()).norm() > 0.2 {
            return true;
        }
        // Blocked when fixed points encroach on the path ahead.
        let s0 = reference.project(pose.position());
        let lookahead = 2.5;
        let mut s = s0;
        while s <= (s0 + lookahead).min(reference.total_length()) {
            let p = reference.point_at(s);
            let near = k_nearest(fixed, p, 1);
            if let Some(q) = near.first() {
                if (q - p).norm() < self.inflation * 0.8 {
                    return true;
                }
            }
            s += 0.1;
        }
        false
    }
}

/// Greedy line-of-sight shortcutting of a grid path: jump to the farthest
/// waypoint whose connecting segment keeps the inflation clearance, then
/// re-densify. Wall-hugging grid corners become traversable diagonals.
pub fn smooth_reference(
    path: &ReferencePath,
    fixed: &[Vector2<f64>],
    inflation: f64,
    resolution: f64,
) -> ReferencePath {
    let pts = path.points();
    if pts.len() < 3 {
        return path.clone();
    }
    let clear = |a: Vector2<f64>, b: Vector2<f64>| -> bool {
        let len = (b - a).norm();
        let steps = (len / (resolution * 0.5)).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let p = a + (b - a) * (k as f64 / steps as f64);
            let near = k_nearest(fixed, p, 1);
            if let Some(q) = near.first() {
                if (q - p).norm() < inflation {
                    return false;
                }
            }
        }
        true
    };
    let mut out = vec![pts[0]];
    let mut i = 0usize;
    while i + 1 < pts.len() {
        let mut j = pts.len() - 1;
        while j > i + 1 && !clear(pts[i], pts[j]) {
            // Binary-ish backoff keeps this O(n log n) in practice.
            j = i + 1 + (j - i - 1) / 2;
        }
        out.push(pts[j]);
        i = j;
    }
    // Re-densify for arc-length projection granularity.
    let mut dense = vec![out[0]];
    for w in out.windows(2) {
        let len = (w[1] - w[0]).norm();
        let pieces = (len / (resolution * 2.0)).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            dense.push(w[0] + (w[1] - w[0]) * (k as f64 / pieces as f64));
        }
    }
    ReferencePath::from_points(dense)
}
