//! Scalar abstraction for similarity arithmetic.
//!
//! Similarities are ratios of small integer counts combined with a weight,
//! so they can be computed in floating point (`f32`, `f64`) or exactly
//! (`Ratio<i64>`, `BigRational`). Ranking uses the exact form so that
//! mathematically equal scores really compare equal and the documented
//! tie-break decides.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio, Rational64};
use num_traits::{Float, One, ToPrimitive, Zero};

pub trait SimScalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// `num / den` with `den > 0`.
    fn from_counts(num: usize, den: usize) -> Self;

    /// Converts a configuration weight such as `0.7`. Exact types take the
    /// simplest rational within float precision (`7/10`), not the binary
    /// expansion.
    fn from_weight(w: f64) -> Self;

    fn as_f64(&self) -> f64;
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl SimScalar for $t {
            fn from_counts(num: usize, den: usize) -> Self {
                num as $t / den as $t
            }

            fn from_weight(w: f64) -> Self {
                w as $t
            }

            fn as_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

fn weight_ratio(w: f64) -> Rational64 {
    Ratio::approximate_float(w).unwrap_or_else(|| panic!("weight {w} has no rational form"))
}

impl SimScalar for Rational64 {
    fn from_counts(num: usize, den: usize) -> Self {
        Ratio::new(num as i64, den as i64)
    }

    fn from_weight(w: f64) -> Self {
        weight_ratio(w)
    }

    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl SimScalar for BigRational {
    fn from_counts(num: usize, den: usize) -> Self {
        Ratio::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_weight(w: f64) -> Self {
        let r = weight_ratio(w);
        Ratio::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
    }

    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Cosine similarity; zero-norm inputs score 0.
pub fn cosine<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na.is_zero() || nb.is_zero() {
        return F::zero();
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Scales `v` to unit L2 norm in place. Zero vectors are left untouched.
pub fn normalize<F: Float>(v: &mut [F]) {
    let norm = v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt();
    if !norm.is_zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_conversion_is_decimal() {
        assert_eq!(Rational64::from_weight(0.7), Ratio::new(7, 10));
        assert_eq!(BigRational::from_weight(0.25).as_f64(), 0.25);
        assert_eq!(<f64 as SimScalar>::from_weight(0.7), 0.7);
    }

    #[test]
    fn counts() {
        assert_eq!(Rational64::from_counts(2, 4), Ratio::new(1, 2));
        assert_eq!(<f32 as SimScalar>::from_counts(1, 4), 0.25f32);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0f64, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0f32, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine(&[0.0f64, 0.0], &[0.0, 1.0]), 0.0);
        let mut v = vec![3.0f32, 4.0];
        normalize(&mut v);
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
    }
}
