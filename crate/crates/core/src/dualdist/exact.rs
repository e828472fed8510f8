//! Exact dual solver: closed-form path for the rectangle chassis and an
//! augmented-Lagrangian projected-gradient path for general convex bodies.

use nalgebra::{Matrix2, Vector2, Vector3};

use super::{DualDistError, DualPair};
use crate::geometry::{Pose2, RobotPolytope};
use crate::scalar::Real;

/// Closed-form rectangle distance result.
#[derive(Clone, Copy, Debug)]
pub struct RectDistance<S> {
    pub distance: S,
    pub closest_body_point: Vector2<S>,
}

/// Distance from a world point to the rectangle body at `pose`, with the
/// clamped closest point in body coordinates. Zero inside.
pub fn closed_form_rect_distance<S: Real>(
    polytope: &RobotPolytope<S>,
    pose: &Pose2<S>,
    p: Vector2<S>,
) -> Result<RectDistance<S>, DualDistError> {
    let (hl, hw) = polytope
        .half_extents()
        .ok_or(DualDistError::UnsupportedShape)?;
    let q = pose.to_body(p);
    let ex = (q.x.abs() - hl).max(S::zero());
    let ey = (q.y.abs() - hw).max(S::zero());
    Ok(RectDistance {
        distance: (ex * ex + ey * ey).sqrt(),
        closest_body_point: Vector2::new(q.x.max(-hl).min(hl), q.y.max(-hw).min(hw)),
    })
}

/// Dual solution: the optimal pair, its objective value (the distance), and
/// how many projected-gradient iterations were spent (0 on closed-form path).
#[derive(Clone, Debug)]
pub struct DualSolution<S> {
    pub pair: DualPair<S>,
    pub objective: S,
    pub iterations: usize,
}

/// Dual objective `mu' (G R'(p - t) - g)`. No feasibility check.
pub fn dual_objective<S: Real>(
    pair: &DualPair<S>,
    polytope: &RobotPolytope<S>,
    pose: &Pose2<S>,
    p: Vector2<S>,
) -> S {
    let q = pose.to_body(p);
    let mut acc = S::zero();
    for ((n, &g), &m) in polytope
        .normals()
        .iter()
        .zip(polytope.offsets())
        .zip(&pair.mu)
    {
        acc += m * (n.dot(&q) - g);
    }
    acc
}

/// Analytic gradient of the dual objective with respect to the pose
/// `(x, y, theta)`, holding the dual pair fixed.
pub fn dual_objective_pose_gradient<S: Real>(
    pair: &DualPair<S>,
    polytope: &RobotPolytope<S>,
    pose: &Pose2<S>,
    p: Vector2<S>,
) -> Vector3<S> {
    let mut w = Vector2::new(S::zero(), S::zero());
    for (n, &m) in polytope.normals().iter().zip(&pair.mu) {
        w += n * m;
    }
    let r = pose.rotation();
    let grad_t = -(r * w);
    let (s, c) = pose.theta.sin_cos();
    // d(R')/d(theta) applied to (p - t).
    let drt = Matrix2::new(-s, c, -c, -s);
    let rel = p - pose.position();
    let grad_theta = w.dot(&(drt * rel));
    Vector3::new(grad_t.x, grad_t.y, grad_theta)
}

/// Solve the dual distance problem exactly.
///
/// Rectangles take a closed form: `lambda` is the negated world-frame unit
/// vector from the closest body point toward `p` and `mu` is recovered from
/// the clamped (active) faces. Other convex bodies run projected-gradient
/// ascent on the augmented dual with multiplier updates on the coupling
/// constraint, finished by an active-support polish.
pub fn solve_dual_exact<S: Real>(
    polytope: &RobotPolytope<S>,
    pose: &Pose2<S>,
    p: Vector2<S>,
    tol: S,
) -> Result<DualSolution<S>, DualDistError> {
    if polytope.half_extents().is_some() {
        return Ok(solve_rect(polytope, pose, p));
    }
    solve_general(polytope, pose, p, tol)
}

fn solve_rect<S: Real>(
    polytope: &RobotPolytope<S>,
    pose: &Pose2<S>,
    p: Vector2<S>,
) -> DualSolution<S> {
    let (hl, hw) = polytope.half_extents().expect("rect path");
    let q = pose.to_body(p);
    let rect = closed_form_rect_distance(polytope, pose, p).expect("rect path");
    let d = rect.distance;
    if d <= S::zero() {
        return DualSolution {
            pair: DualPair::zeros(4),
            objective: S::zero(),
            iterations: 0,
        };
    }
    let u = (q - rect.closest_body_point) / d;
    // Face ordering (+x, -x, +y, -y); only clamped axes carry weight.
    let mut mu = vec![S::zero(); 4];
    if q.x > hl {
        mu[0] = u.x;
    } else if q.x < -hl {
        mu[1] = -u.x;
    }
    if q.y > hw {
        mu[2] = u.y;
    } else if q.y < -hw {
        mu[3] = -u.y;
    }
    let pair = DualPair {
        mu,
        lambda: -(pose.rotation() * u),
    };
    let objective = dual_objective(&pair, polytope, pose, p);
    DualSolution {
        pair,
        objective,
        iterations: 0,
    }
}

fn solve_general<S: Real>(
    polytope: &RobotPolytope<S>,
    pose: &Pose2<S>,
    p: Vector2<S>,
    tol: S,
) -> Result<DualSolution<S>, DualDistError> {
    let q = pose.to_body(p);
    let margins = polytope.face_margins(q);
    let m = margins.len();
    if margins.iter().all(|&h| h <= S::zero()) {
        // Interior or boundary: the dual optimum is the origin.
        return Ok(DualSolution {
            pair: DualPair::zeros(m),
            objective: S::zero(),
            iterations: 0,
        });
    }

    // Ascend A(mu, lb) = mu'h - nu'c - (rho/2)|c|^2 with c = G'mu + lb,
    // projecting mu onto the nonnegative orthant and lb into the unit ball.
    let normals = polytope.normals();
    let mut mu = vec![S::zero(); m];
    let mut lb = Vector2::new(S::zero(), S::zero());
    let mut nu = Vector2::new(S::zero(), S::zero());
    let mut rho = S::from_f64(4.0);
    let rho_max = S::from_f64(1e6);
    let mut iterations = 0usize;
    let mut best_residual = S::infinity();

    let coupling = |mu: &[S], lb: &Vector2<S>| -> Vector2<S> {
        let mut c = *lb;
        for (n, &w) in normals.iter().zip(mu) {
            c += n * w;
        }
        c
    };

    for _outer in 0..40 {
        // Step size from the augmented Hessian bound rho * (m + 1).
        let step = S::one() / (rho * S::from_f64((m + 1) as f64));
        for _inner in 0..400 {
            iterations += 1;
            let c = coupling(&mu, &lb);
            let mut max_update = S::zero();
            for i in 0..m {
                let grad = margins[i] - normals[i].dot(&(nu + c * rho));
                let next = (mu[i] + step * grad).max(S::zero());
                max_update = max_update.max((next - mu[i]).abs());
                mu[i] = next;
            }
            let c = coupling(&mu, &lb);
            let grad_lb = -(nu + c * rho);
            let mut next_lb = lb + grad_lb * step;
            let norm = next_lb.dot(&next_lb).sqrt();
            if norm > S::one() {
                next_lb /= norm;
            }
            max_update = max_update.max((next_lb - lb).dot(&(next_lb - lb)).sqrt());
            lb = next_lb;
            if max_update < step * S::from_f64(1e-10) {
                break;
            }
        }
        let c = coupling(&mu, &lb);
        let residual = c.x.abs().max(c.y.abs());
        best_residual = best_residual.min(residual);
        if residual < S::from_f64(1e-8) {
            break;
        }
        nu += c * rho;
        rho = (rho * S::from_f64(5.0)).min(rho_max);
    }

    // Polish on the support identified by the iterate: the optimum is carried
    // by one face or an adjacent pair, recoverable in closed form.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| mu[b].partial_cmp(&mu[a]).unwrap());
    let top = order[0];
    let mut best: Option<(S, Vec<S>)> = None;
    let mut consider = |obj: S, cand: Vec<S>| {
        if best.as_ref().map_or(true, |(b, _)| obj > *b) {
            best = Some((obj, cand));
        }
    };
    for i in 0..m {
        if margins[i] > S::zero() {
            let mut cand = vec![S::zero(); m];
            cand[i] = S::one();
            consider(margins[i], cand);
        }
    }
    for &j in order.iter().skip(1) {
        let ni = normals[top];
        let nj = normals[j];
        let det = ni.x * nj.y - ni.y * nj.x;
        if det.abs() < S::from_f64(1e-12) {
            continue;
        }
        // Columns of N are the two normals; w = N^-T h_A, v* = w/|w|.
        let inv_nt = Matrix2::new(nj.y / det, -ni.y / det, -nj.x / det, ni.x / det);
        let w = inv_nt * Vector2::new(margins[top], margins[j]);
        let wn = w.dot(&w).sqrt();
        if wn <= S::zero() {
            continue;
        }
        let v = w / wn;
        let inv_n = Matrix2::new(nj.y / det, -nj.x / det, -ni.y / det, ni.x / det);
        let mu_pair = inv_n * v;
        if mu_pair.x >= -S::from_f64(1e-12) && mu_pair.y >= -S::from_f64(1e-12) {
            let mut cand = vec![S::zero(); m];
            cand[top] = mu_pair.x.max(S::zero());
            cand[j] = mu_pair.y.max(S::zero());
            consider(wn, cand);
        }
    }

    let (objective, mu) = best.ok_or(DualDistError::Convergence {
        residual: best_residual.as_f64(),
    })?;
    let mut lb_star = Vector2::new(S::zero(), S::zero());
    for (n, &w) in normals.iter().zip(&mu) {
        lb_star -= n * w;
    }
    let pair = DualPair {
        mu,
        lambda: pose.rotation() * lb_star,
    };
    let residual = pair.coupling_residual(polytope, pose);
    if residual > tol {
        return Err(DualDistError::Convergence {
            residual: residual.as_f64(),
        });
    }
    Ok(DualSolution {
        pair,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chassis() -> RobotPolytope<f64> {
        RobotPolytope::rectangle(0.322, 0.220).unwrap()
    }

    fn unit_square() -> RobotPolytope<f64> {
        RobotPolytope::rectangle(2.0, 2.0).unwrap()
    }

    #[test]
    fn closed_form_axis_aligned_exterior() {
        let r = closed_form_rect_distance(
            &unit_square(),
            &Pose2::origin(),
            Vector2::new(3.0, 0.0),
        )
        .unwrap();
        assert_relative_eq!(r.distance, 2.0, epsilon = 1e-15);
        assert_relative_eq!(r.closest_body_point.x, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.closest_body_point.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_interior_is_zero() {
        let r = closed_form_rect_distance(
            &unit_square(),
            &Pose2::origin(),
            Vector2::new(0.2, -0.7),
        )
        .unwrap();
        assert_eq!(r.distance, 0.0);
    }

    #[test]
    fn closed_form_rotation_invariance() {
        let poly = chassis();
        let p = Vector2::new(1.3, 0.8);
        let base = closed_form_rect_distance(&poly, &Pose2::origin(), p)
            .unwrap()
            .distance;
        let theta = std::f64::consts::FRAC_PI_4;
        let pose = Pose2::new(0.0, 0.0, theta);
        let rotated = pose.rotation() * p;
        let d = closed_form_rect_distance(&poly, &pose, rotated).unwrap().distance;
        assert_relative_eq!(d, base, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_rejects_non_rectangle() {
        let tri = RobotPolytope::new(
            vec![
                Vector2::new(1.0, 0.0),
                Vector2::new(-0.6, 0.8),
                Vector2::new(-0.6, -0.8),
            ],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            closed_form_rect_distance(&tri, &Pose2::origin(), Vector2::new(3.0, 0.0)),
            Err(DualDistError::UnsupportedShape)
        ));
    }

    #[test]
    fn dual_exact_unit_square_axis_point() {
        let sol = solve_dual_exact(
            &unit_square(),
            &Pose2::origin(),
            Vector2::new(3.0, 0.0),
            1e-9,
        )
        .unwrap();
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-12);
        assert_relative_eq!(sol.pair.mu[0], 1.0, epsilon = 1e-12);
        assert_eq!(&sol.pair.mu[1..], &[0.0, 0.0, 0.0]);
        assert_relative_eq!(sol.pair.lambda.x, -1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.pair.lambda.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_exact_interior_is_origin() {
        let sol = solve_dual_exact(
            &unit_square(),
            &Pose2::origin(),
            Vector2::new(0.1, 0.2),
            1e-9,
        )
        .unwrap();
        assert_eq!(sol.objective, 0.0);
        assert!(sol.pair.mu.iter().all(|&m| m == 0.0));
        assert_eq!(sol.pair.lambda, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn dual_exact_matches_closed_form_sweep() {
        let poly = chassis();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let pose = Pose2::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            let r = 5.0 * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = Vector2::new(pose.x + r * a.cos(), pose.y + r * a.sin());
            let sol = solve_dual_exact(&poly, &pose, p, 1e-9).unwrap();
            let cf = closed_form_rect_distance(&poly, &pose, p).unwrap().distance;
            assert!(
                (sol.objective - cf).abs() <= 1e-6,
                "objective {} vs closed form {}",
                sol.objective,
                cf
            );
            assert!(sol.pair.is_feasible(&poly, &pose, 1e-6));
        }
    }

    #[test]
    fn dual_objective_linearity_in_mu() {
        let poly = unit_square();
        let pose = Pose2::new(0.3, -0.1, 0.4);
        let p = Vector2::new(3.0, 1.5);
        let sol = solve_dual_exact(&poly, &pose, p, 1e-9).unwrap();
        let mut half = sol.pair.clone();
        for m in &mut half.mu {
            *m *= 0.5;
        }
        half.lambda *= 0.5;
        let obj = dual_objective(&half, &poly, &pose, p);
        assert_relative_eq!(obj, 0.5 * sol.objective, epsilon = 1e-12);
    }

    #[test]
    fn dual_objective_zero_mu_is_zero() {
        let poly = unit_square();
        let pair = DualPair::zeros(4);
        assert_eq!(
            dual_objective(&pair, &poly, &Pose2::origin(), Vector2::new(9.0, -4.0)),
            0.0
        );
    }

    /// Brute-force point-to-convex-polygon distance over edges and vertices.
    fn polygon_distance(vertices: &[Vector2<f64>], q: Vector2<f64>) -> f64 {
        let n = vertices.len();
        let mut inside = true;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let e = b - a;
            let cross = e.x * (q.y - a.y) - e.y * (q.x - a.x);
            if cross < 0.0 {
                inside = false;
            }
            let t = ((q - a).dot(&e) / e.dot(&e)).clamp(0.0, 1.0);
            let closest = a + e * t;
            best = best.min((q - closest).norm());
        }
        if inside {
            0.0
        } else {
            best
        }
    }

    fn pentagon() -> RobotPolytope<f64> {
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for k in 0..5 {
            let a = 0.31 + std::f64::consts::TAU * (k as f64) / 5.0;
            normals.push(Vector2::new(a.cos(), a.sin()));
            offsets.push(0.4 + 0.1 * ((k % 3) as f64));
        }
        RobotPolytope::new(normals, offsets).unwrap()
    }

    #[test]
    fn dual_exact_general_polytope_matches_polygon_oracle() {
        let poly = pentagon();
        let verts = poly.vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let pose = Pose2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            let r = 4.0 * rng.gen::<f64>().sqrt();
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = Vector2::new(pose.x + r * a.cos(), pose.y + r * a.sin());
            let q = pose.to_body(p);
            let oracle = polygon_distance(&verts, q);
            let sol = solve_dual_exact(&poly, &pose, p, 1e-6).unwrap();
            assert!(
                (sol.objective - oracle).abs() <= 1e-9,
                "dual {} vs oracle {} at q = {q:?}",
                sol.objective,
                oracle
            );
            assert!(sol.pair.is_feasible(&poly, &pose, 1e-9));
        }
    }

    #[test]
    fn dual_exact_rigid_equivariance() {
        let poly = chassis();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let pose = Pose2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-3.0..3.0),
            );
            let p = Vector2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            let base = solve_dual_exact(&poly, &pose, p, 1e-9).unwrap().objective;

            let shift = Pose2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.9);
            let moved_pose = Pose2::new(
                shift.to_world(pose.position()).x,
                shift.to_world(pose.position()).y,
                pose.theta + shift.theta,
            );
            let moved_p = shift.to_world(p);
            let moved = solve_dual_exact(&poly, &moved_pose, moved_p, 1e-9)
                .unwrap()
                .objective;
            assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
        }
    }

    #[test]
    fn solver_instantiates_for_f32() {
        let poly = RobotPolytope::<f32>::rectangle(0.322, 0.220).unwrap();
        let pose = Pose2::<f32>::new(0.1, -0.2, 0.4);
        let p = nalgebra::Vector2::new(2.0f32, 1.0);
        let sol = solve_dual_exact(&poly, &pose, p, 1e-4).unwrap();
        let cf = closed_form_rect_distance(&poly, &pose, p).unwrap().distance;
        assert!((sol.objective - cf).abs() < 1e-4);
        assert!(sol.pair.is_feasible(&poly, &pose, 1e-3));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let poly = chassis();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let pose = Pose2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-3.0..3.0),
            );
            let r = rng.gen_range(0.5..4.0);
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = Vector2::new(pose.x + r * a.cos(), pose.y + r * a.sin());
            let sol = solve_dual_exact(&poly, &pose, p, 1e-9).unwrap();
            if sol.objective < 0.05 {
                continue;
            }
            let grad = dual_objective_pose_gradient(&sol.pair, &poly, &pose, p);
            let h = 1e-6;
            let fd = |dx: f64, dy: f64, dt: f64| {
                let plus = Pose2::new(pose.x + dx * h, pose.y + dy * h, pose.theta + dt * h);
                let minus = Pose2::new(pose.x - dx * h, pose.y - dy * h, pose.theta - dt * h);
                (dual_objective(&sol.pair, &poly, &plus, p)
                    - dual_objective(&sol.pair, &poly, &minus, p))
                    / (2.0 * h)
            };
            let numeric = Vector3::new(fd(1.0, 0.0, 0.0), fd(0.0, 1.0, 0.0), fd(0.0, 0.0, 1.0));
            let scale = grad.norm().max(1e-6);
            assert!(
                (grad - numeric).norm() / scale < 1e-4,
                "grad {grad:?} vs fd {numeric:?}"
            );
        }
    }
}
