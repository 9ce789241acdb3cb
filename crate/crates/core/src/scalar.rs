//! Floating point abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar used throughout the simulator: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent finite literals,
    /// which never happens for the two implementors.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize fits in a float")
    }

    /// Widens to `f64` for reporting and for the dense eigensolver.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Default absolute tolerance for structural checks: `1e-12`, raised to a few ulps when the
    /// scalar type cannot resolve that.
    #[inline]
    fn default_validation_tol() -> Self {
        Self::lit(1e-12).max(Self::epsilon() * Self::lit(8.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
