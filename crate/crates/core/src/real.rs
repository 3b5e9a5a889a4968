//! Floating-point scalar abstraction.
//!
//! Every numeric routine in this crate is generic over [`Real`] so the same
//! code runs in `f32` (compact, fast) or `f64` (reference precision). The
//! trait is blanket-implemented; user code never implements it by hand.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy cast from `f64`, for literals and accumulated statistics.
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    /// Lossy cast from `usize`, for counts entering averages.
    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to any Real")
    }

    /// Widening cast to `f64`, for serialization and diagnostics.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("any Real converts to f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
}

/// π as `T`.
#[inline]
pub fn pi<T: Real>() -> T {
    T::from_f64_lossy(std::f64::consts::PI)
}

/// 2π as `T`.
#[inline]
pub fn two_pi<T: Real>() -> T {
    T::from_f64_lossy(std::f64::consts::TAU)
}
