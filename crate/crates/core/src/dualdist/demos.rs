//! Demonstration-set generation: optimal dual pairs from the exact solver,
//! sampled around the body for imitation training.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::exact::solve_dual_exact;
use super::DualDistError;
use crate::geometry::{Pose2, RobotPolytope};
use crate::scalar::Real;

/// Radial sampling bounds in the robot body frame.
#[derive(Clone, Copy, Debug)]
pub struct SamplingRanges<S> {
    pub r_min: S,
    pub r_max: S,
    pub count: usize,
}

impl<S: Real> SamplingRanges<S> {
    pub fn new(r_min: S, r_max: S, count: usize) -> Result<Self, DualDistError> {
        if r_min < S::zero() || r_min >= r_max {
            return Err(DualDistError::BadSamplingRanges);
        }
        Ok(Self {
            r_min,
            r_max,
            count,
        })
    }
}

/// One imitation sample: a body-frame point with its optimal dual pair and
/// the exact distance. The pose is fixed to the identity since the dual
/// problem depends on the point only through body coordinates.
#[derive(Clone, Debug)]
pub struct DemoSample<S> {
    pub point: Vector2<S>,
    pub mu: Vec<S>,
    pub lambda: Vector2<S>,
    pub distance: S,
}

/// Generate `count` samples uniformly (by area) in the annulus
/// `[r_min, r_max]`, labeled by the exact solver. Deterministic under `seed`.
pub fn generate_demos<S: Real>(
    ranges: &SamplingRanges<S>,
    polytope: &RobotPolytope<S>,
    seed: u64,
) -> Result<Vec<DemoSample<S>>, DualDistError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ranges.count);
    let pose = Pose2::origin();
    let r2_min = (ranges.r_min * ranges.r_min).as_f64();
    let r2_max = (ranges.r_max * ranges.r_max).as_f64();
    let mut skipped = 0usize;
    while out.len() < ranges.count {
        let u: f64 = rng.gen();
        let r = (r2_min + u * (r2_max - r2_min)).sqrt();
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = Vector2::new(S::from_f64(r * a.cos()), S::from_f64(r * a.sin()));
        match solve_dual_exact(polytope, &pose, p, S::from_f64(1e-9)) {
            Ok(sol) => out.push(DemoSample {
                point: p,
                mu: sol.pair.mu,
                lambda: sol.pair.lambda,
                distance: sol.objective,
            }),
            Err(_) => {
                skipped += 1;
                if skipped > ranges.count / 10 + 100 {
                    return Err(DualDistError::Convergence { residual: f64::NAN });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chassis() -> RobotPolytope<f64> {
        RobotPolytope::rectangle(0.322, 0.220).unwrap()
    }

    #[test]
    fn zero_count_is_empty() {
        let ranges = SamplingRanges::new(0.0, 5.0, 0).unwrap();
        assert!(generate_demos(&ranges, &chassis(), 1).unwrap().is_empty());
    }

    #[test]
    fn same_seed_reproduces_dataset() {
        let ranges = SamplingRanges::new(0.0, 5.0, 512).unwrap();
        let a = generate_demos(&ranges, &chassis(), 42).unwrap();
        let b = generate_demos(&ranges, &chassis(), 42).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.point, y.point);
            assert_eq!(x.mu, y.mu);
            assert_eq!(x.lambda, y.lambda);
        }
    }

    #[test]
    fn samples_are_dual_feasible() {
        let poly = chassis();
        let ranges = SamplingRanges::new(0.0, 5.0, 2000).unwrap();
        let pose = Pose2::origin();
        for s in generate_demos(&ranges, &poly, 9).unwrap() {
            let pair = super::super::DualPair {
                mu: s.mu.clone(),
                lambda: s.lambda,
            };
            assert!(pair.is_feasible(&poly, &pose, 1e-6));
            let r = (s.point.x * s.point.x + s.point.y * s.point.y).sqrt();
            assert!(r <= 5.0 + 1e-12);
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(SamplingRanges::new(2.0, 1.0, 10).is_err());
        assert!(SamplingRanges::new(-0.1, 1.0, 10).is_err());
    }
}
