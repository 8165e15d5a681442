//! Floating-point abstraction shared by the vector, scoring and training code.
//!
//! Everything numeric in the engine is written against [`Scalar`], so the same
//! code paths run in `f32` (the on-disk and wire precision) and in `f64` (used
//! for gradient checking and adapter training).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real number type accepted by the engine: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const HALF: Self;

    /// Lossy conversion from `f64`; out-of-range values saturate to infinity.
    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn as_f32(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {
    const HALF: Self = 0.5;
}

impl Scalar for f64 {
    const HALF: Self = 0.5;
}

/// Dot product of two equal-length slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Mean of `xs`, rounded as if summed and divided exactly: a compensated
/// sum, then one fused correction step on the quotient. The mean of
/// `[0.9, 0.7, 0.5]` is `0.7`, where naive summation gives `0.7000000000000001`.
pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    let (mut s, mut c) = (T::zero(), T::zero());
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    let n = T::of(xs.len() as f64);
    let q = s / n;
    let r = (-q).mul_add(n, s) + c;
    q + r / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_rounds_like_exact_arithmetic() {
        assert_eq!(mean(&[0.9f64, 0.7, 0.5]), 0.7);
        assert_eq!(mean(&[0.2f64, 0.4]), 0.30000000000000004);
        assert_eq!(mean(&[1.0f32]), 1.0);
        assert!(mean::<f64>(&[]).is_nan());
    }

    #[test]
    fn conversions_round_trip() {
        assert_eq!(<f32 as Scalar>::of(0.25).as_f64(), 0.25);
        assert_eq!(<f64 as Scalar>::of(1e-300).as_f64(), 1e-300);
        assert_eq!(l2_norm(&[3.0f64, 4.0]), 5.0);
        assert_eq!(dot(&[1.0f32, 2.0], &[3.0, 4.0]), 11.0);
    }
}
