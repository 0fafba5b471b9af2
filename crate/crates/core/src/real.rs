//! Scalar abstraction over `f32`/`f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar for every numeric routine in this crate.
///
/// All randomness is drawn in `f64` and converted through [`Real::of`], so
/// the `f32` and `f64` lanes of an algorithm consume identical RNG streams.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(|| Self::of(n as f64))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dot product of two equally sized slices.
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Squared Euclidean norm.
pub fn norm_sq<F: Real>(a: &[F]) -> F {
    dot(a, a)
}

/// Euclidean norm.
pub fn norm<F: Real>(a: &[F]) -> F {
    norm_sq(a).sqrt()
}
