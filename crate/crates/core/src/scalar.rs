//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only if the value is unrepresentable.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Relative threshold below which a Gram-Schmidt pivot counts as rank loss.
    fn rank_tolerance() -> Self {
        Self::lit(1e-13).max(Self::epsilon() * Self::lit(100.0))
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
