//! Floating-point scalar abstraction for the RL math kernels.
//!
//! Everything in [`crate::rlvr`] is generic over this trait so the same kernels
//! run in f32 or f64; the exact answer algebra uses arbitrary-precision
//! rationals instead and is unaffected.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// f32 or f64.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + num_traits::NumAssignOps + Sum + Debug + Display
{
    /// Lossless-enough conversion from f64 for constants and tolerances.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
