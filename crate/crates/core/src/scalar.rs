//! Floating-point abstraction shared by every numeric module.
//!
//! All math in this crate is written against [`Scalar`] so the same code runs
//! in `f32` (compact models) and `f64` (gradient checks, checkpoints).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant must be representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(value: usize) -> Self {
        Self::from_usize(value).expect("usize must be representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Mean and population variance, two-pass, with the data shifted by its
/// first element so constant input yields its exact value and zero variance.
pub fn population_moments<T: Scalar>(values: &[T]) -> (T, T) {
    let Some(&origin) = values.first() else {
        return (T::zero(), T::zero());
    };
    let n = T::from_usize_lossy(values.len());
    let mean = origin + values.iter().map(|&v| v - origin).sum::<T>() / n;
    let var = values
        .iter()
        .map(|&v| {
            let d = v - mean;
            d * d
        })
        .sum::<T>()
        / n;
    (mean, var)
}

pub(crate) fn all_finite<T: Scalar>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite())
}
