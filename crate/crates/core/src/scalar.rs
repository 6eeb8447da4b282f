//! Scalar abstraction shared by the exact-evolution, linear-solve and
//! isoperimetry code.
//!
//! Everything numerical downstream of the sampled conductances is written
//! against [`Scalar`], so the same routine runs in `f64` for production sizes,
//! in `f32` for quick looks, and in [`Exact`] rationals when a check must be
//! free of rounding.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

/// Arbitrary-precision rational, used where a check has zero tolerance.
pub type Exact = BigRational;

pub trait Scalar:
    Clone + Debug + Send + Sync + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive + 'static
{
    /// `true` when arithmetic is exact (no rounding, no flushing).
    const EXACT: bool;

    /// Converts a conductance or probability. Rationals convert the binary
    /// value exactly.
    fn from_f64_value(v: f64) -> Self;

    /// Sets subnormal-scale values to zero. Returns whether a flush happened.
    fn flush_tiny(&mut self) -> bool;

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_value(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar")
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    #[inline]
    fn from_f64_value(v: f64) -> Self {
        v
    }

    #[inline]
    fn flush_tiny(&mut self) -> bool {
        if *self != 0.0 && self.abs() < 1e-300 {
            *self = 0.0;
            true
        } else {
            false
        }
    }
}

impl Scalar for f32 {
    const EXACT: bool = false;

    #[inline]
    fn from_f64_value(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn flush_tiny(&mut self) -> bool {
        if *self != 0.0 && self.abs() < f32::MIN_POSITIVE {
            *self = 0.0;
            true
        } else {
            false
        }
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_f64_value(v: f64) -> Self {
        if v == 0.0 {
            return BigRational::zero();
        }
        BigRational::from_float(v).expect("finite conductance")
    }

    fn flush_tiny(&mut self) -> bool {
        false
    }
}

/// Builds an exact rational `num / den`.
pub fn ratio(num: i64, den: i64) -> Exact {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}
