//! Unicycle kinematics shared by the planner, the correction executor, and
//! the simulator's motion integration.

use serde::{Deserialize, Serialize};

use crate::geometry::normalize_angle;
use crate::Pose2;

/// Differential-drive command: linear and angular velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub v: f64,
    pub psi: f64,
}

impl Control {
    pub const ZERO: Control = Control { v: 0.0, psi: 0.0 };

    pub fn clamp(self, min: Control, max: Control) -> Control {
        Control {
            v: self.v.clamp(min.v, max.v),
            psi: self.psi.clamp(min.psi, max.psi),
        }
    }
}

/// Euler step of the unicycle: `s' = s + (v cos, v sin, psi) * dt` with the
/// heading renormalized.
pub fn kinematics_step(s: &Pose2, u: Control, dt: f64) -> Pose2 {
    Pose2::new(
        s.x + u.v * s.theta.cos() * dt,
        s.y + u.v * s.theta.sin() * dt,
        normalize_angle(s.theta + u.psi * dt),
    )
}
