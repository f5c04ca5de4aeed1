//! Scalar abstraction shared by the geometric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// Orthonormality tolerance used when validating rotations.
    fn ortho_tolerance() -> Self;
}

impl Real for f32 {
    fn ortho_tolerance() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn ortho_tolerance() -> Self {
        1e-9
    }
}
