//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::{Product, Sum};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Tolerances throughout the crate are specified in `f64` and converted with
/// [`Scalar::c`]; the defaults are calibrated for `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Product + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts a count.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Pivot / comparison tolerance scaled to the type's precision
    /// (about `4e-11` for `f64`, `2e-5` for `f32`).
    #[inline]
    fn pivot_tol() -> Self {
        Self::epsilon().powf(Self::c(2.0 / 3.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `0 * inf = 0` product used for expectations of extended-valued functions.
#[inline]
pub(crate) fn weighted<S: Scalar>(weight: S, value: S) -> S {
    if weight == S::zero() {
        S::zero()
    } else {
        weight * value
    }
}
