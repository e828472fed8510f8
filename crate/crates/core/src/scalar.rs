//! Scalar abstraction for the numeric core.
//!
//! Geometry and the dual-distance machinery are generic over [`Real`] so the
//! same code runs in `f32` or `f64`. The crate root exports `f64` aliases,
//! which is what the simulator and planner layers use.

use std::fmt::{Debug, Display};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64` literals and config values.
    fn from_f64(v: f64) -> Self;

    /// Widening conversion for metrics and serialization.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn midpoint<S: Real>(a: S, b: S) -> S {
        (a + b) / S::from_f64(2.0)
    }

    #[test]
    fn generic_arithmetic_instantiates_for_both_widths() {
        assert_eq!(midpoint(1.0f32, 3.0f32), 2.0f32);
        assert_eq!(midpoint(1.0f64, 3.0f64), 2.0f64);
    }
}
