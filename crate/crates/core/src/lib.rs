//! Contact-tolerant navigation core.
//!
//! The crate splits a 2D lidar scan into contactable and contact-intolerant
//! point sets using image-space mask memory ([`partition`]), computes robot
//! polytope to point distances through an exact dual solver and a learned
//! surrogate ([`dualdist`]), plans receding-horizon motions directly against
//! the partitioned points ([`planner`]), and closes the loop in a
//! deterministic 2D sandbox ([`sim`]).
//!
//! The numeric core ([`geometry`], [`dualdist`]) is generic over the scalar
//! type; the aliases below fix `f64`, which is what the simulator, planner,
//! and CLI layers use.

pub mod dualdist;
pub mod partition;
pub mod planner;
pub mod sim;
pub mod geometry;
pub mod scalar;

pub use scalar::Real;

/// Planar robot pose (f64).
pub type Pose2 = geometry::Pose2<f64>;
/// Robot body polytope (f64).
pub type RobotPolytope = geometry::RobotPolytope<f64>;
/// Mounted pinhole camera (f64).
pub type CameraModel = geometry::CameraModel<f64>;
