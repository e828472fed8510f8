//! Point-to-polytope distance through the dual problem, demonstration
//! generation, and the learned surrogate used for batched inference.
//!
//! For a body `G x <= g` at pose `s` and a point `p`, the dual of the
//! minimum-distance problem maximizes `mu' (G R'(p - t) - g)` over
//! `mu >= 0`, `|lambda| <= 1`, `mu' G + lambda' R = 0`. Its optimum equals
//! the Euclidean distance outside the body and zero inside.

mod demos;
mod engine;
mod exact;
mod mlp;

pub use demos::{generate_demos, DemoSample, SamplingRanges};
pub use engine::{DistanceEngine, DualQuery};
pub use exact::{
    closed_form_rect_distance, dual_objective, dual_objective_pose_gradient, solve_dual_exact,
    DualSolution, RectDistance,
};
pub use mlp::{train_mlp, MlpModel, SurrogateDual, TrainConfig, TrainReport};

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::{Pose2, RobotPolytope};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum DualDistError {
    #[error("operation requires the canonical rectangle polytope")]
    UnsupportedShape,
    #[error("dual solver did not converge (best residual {residual:e})")]
    Convergence { residual: f64 },
    #[error("sampling ranges invalid: need 0 <= r_min < r_max")]
    BadSamplingRanges,
    #[error("demonstration set is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("model file rejected: {0}")]
    BadModelFile(String),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Dual variables of the point-to-polytope distance problem. `lambda` is
/// stored in the world frame, matching the coupling `mu' G + lambda' R = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPair<S> {
    pub mu: Vec<S>,
    pub lambda: Vector2<S>,
}

impl<S: Real> DualPair<S> {
    pub fn zeros(faces: usize) -> Self {
        Self {
            mu: vec![S::zero(); faces],
            lambda: Vector2::new(S::zero(), S::zero()),
        }
    }

    /// `G' mu + R' lambda` (the transposed coupling row).
    pub fn coupling(&self, polytope: &RobotPolytope<S>, pose: &Pose2<S>) -> Vector2<S> {
        let mut v = Vector2::new(S::zero(), S::zero());
        for (n, &m) in polytope.normals().iter().zip(&self.mu) {
            v += n * m;
        }
        v + pose.rotation().transpose() * self.lambda
    }

    /// Infinity norm of the coupling residual.
    pub fn coupling_residual(&self, polytope: &RobotPolytope<S>, pose: &Pose2<S>) -> S {
        let r = self.coupling(polytope, pose);
        if r.x.abs() > r.y.abs() {
            r.x.abs()
        } else {
            r.y.abs()
        }
    }

    pub fn lambda_norm(&self) -> S {
        self.lambda.dot(&self.lambda).sqrt()
    }

    /// Type invariants: nonnegative `mu`, `lambda` in the unit ball, coupling
    /// residual within the solver tolerance.
    pub fn is_feasible(&self, polytope: &RobotPolytope<S>, pose: &Pose2<S>, tol: S) -> bool {
        self.mu.iter().all(|&m| m >= S::zero())
            && self.lambda_norm() <= S::one() + S::from_f64(1e-9)
            && self.coupling_residual(polytope, pose) <= tol
    }
}
