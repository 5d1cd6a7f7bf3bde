//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used for coordinates, degrees of freedom and
/// every derived quantity. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion of an `f64` literal into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must be representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `|x|^p`, with `0^p = 0` for every `p > 0`.
    #[inline]
    fn abs_pow(self, p: Self) -> Self {
        let a = self.abs();
        if a == Self::zero() {
            Self::zero()
        } else {
            a.powf(p)
        }
    }

    /// Signed power `|x|^(p-1) sign(x)`.
    #[inline]
    fn signed_pow(self, e: Self) -> Self {
        let a = self.abs();
        if a == Self::zero() {
            Self::zero()
        } else {
            a.powf(e) * self.signum()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Euclidean length of a 2-vector.
#[inline]
pub fn norm2<T: Real>(v: [T; 2]) -> T {
    v[0].hypot(v[1])
}

#[inline]
pub fn dot2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[0] + a[1] * b[1]
}
