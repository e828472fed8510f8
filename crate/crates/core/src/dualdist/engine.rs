//! Distance engine: one façade over the exact solver and the surrogate so
//! the planner can swap them per run.

use nalgebra::Vector2;

use super::exact::solve_dual_exact;
use super::mlp::MlpModel;
use super::{DualDistError, DualPair};
use crate::geometry::{Pose2, RobotPolytope};
use crate::scalar::Real;

/// Dual query result for one point.
#[derive(Clone, Debug)]
pub struct DualQuery<S> {
    pub pair: DualPair<S>,
    pub distance: S,
}

pub enum DistanceEngine<S: Real> {
    Exact { polytope: RobotPolytope<S>, tol: S },
    Surrogate { model: MlpModel<S> },
}

impl<S: Real> DistanceEngine<S> {
    pub fn exact(polytope: RobotPolytope<S>) -> Self {
        Self::Exact {
            polytope,
            tol: S::from_f64(1e-8),
        }
    }

    pub fn surrogate(model: MlpModel<S>) -> Self {
        Self::Surrogate { model }
    }

    pub fn polytope(&self) -> &RobotPolytope<S> {
        match self {
            Self::Exact { polytope, .. } => polytope,
            Self::Surrogate { model } => model.polytope(),
        }
    }

    /// Extra margin the planner must add to the safety distance: zero for the
    /// exact solver, the measured p99 coupling slack for the surrogate.
    pub fn safety_margin(&self) -> S {
        match self {
            Self::Exact { .. } => S::zero(),
            Self::Surrogate { model } => model.rho_p99,
        }
    }

    /// Dual pairs and distances for a batch, preserving order.
    pub fn query(
        &self,
        pose: &Pose2<S>,
        points: &[Vector2<S>],
    ) -> Result<Vec<DualQuery<S>>, DualDistError> {
        match self {
            Self::Exact { polytope, tol } => points
                .iter()
                .map(|&p| {
                    solve_dual_exact(polytope, pose, p, *tol).map(|sol| DualQuery {
                        pair: sol.pair,
                        distance: sol.objective,
                    })
                })
                .collect(),
            Self::Surrogate { model } => Ok(model
                .infer_duals(pose, points)
                .into_iter()
                .map(|out| DualQuery {
                    pair: out.pair,
                    distance: out.distance,
                })
                .collect()),
        }
    }

    /// Minimum distance over the batch with the achieving index. Empty input
    /// yields `(+inf, None)`.
    pub fn min_distance(
        &self,
        pose: &Pose2<S>,
        points: &[Vector2<S>],
    ) -> Result<(S, Option<usize>), DualDistError> {
        let queries = self.query(pose, points)?;
        let mut best = (S::infinity(), None);
        for (i, q) in queries.iter().enumerate() {
            if q.distance < best.0 {
                best = (q.distance, Some(i));
            }
        }
        Ok(best)
    }
}
