//! Floating-point abstraction used by every numeric routine in the crate.
//!
//! All algorithmic code is written against [`Scalar`] so the same network,
//! projection, tracking and stability logic runs in `f32` or `f64`. The
//! scenario generators and the CLI fix the type to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals and IEEE types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest tolerance that is meaningful for this type, floored at `floor`.
    #[inline]
    fn tol_floor(floor: f64, ulps: f64) -> Self {
        let eps = Self::epsilon().as_f64() * ulps;
        Self::lit(floor.max(eps))
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

/// `[v]^+`, applied componentwise by callers.
#[inline]
pub fn positive_part<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}
