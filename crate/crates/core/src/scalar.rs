//! Scalar abstraction for the closed-form law evaluation.
//!
//! Evaluation works for any IEEE float; fitting and planning are carried out
//! in `f64`, and exact accounting (epochs, schedules) uses big rationals.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the law evaluators: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every float scalar")
    }

    fn of_u64(v: u64) -> Self {
        Self::from_u64(v).expect("u64 converts to every float scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
