//! Floating-point abstraction used by the fitting layers.
//!
//! History quantification is exact (integer/rational); everything from the
//! GLM boundary onwards is generic over a [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar type usable by the GLM, likelihood and simulation layers.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + serde::Serialize
    + 'static
{
    /// Converts an exact non-negative rational to this scalar.
    fn from_ratio(r: &Ratio<u64>) -> Self {
        Self::from_u64(*r.numer()).unwrap() / Self::from_u64(*r.denom()).unwrap()
    }

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).unwrap()
    }

    /// Lossy conversion from `f64` constants.
    fn c(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Convergence floor: the requested tolerance, but never below what the
    /// type can actually resolve.
    fn tolerance(requested: f64) -> Self {
        Self::c(requested).max(Self::epsilon() * Self::c(64.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function, computed without overflow for large |x|.
pub fn expit<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_is_symmetric_and_stable() {
        assert_eq!(expit(0.0_f64), 0.5);
        assert!((expit(3.0_f64) + expit(-3.0) - 1.0).abs() < 1e-15);
        assert!(expit(-800.0_f64) >= 0.0);
        assert_eq!(expit(800.0_f64), 1.0);
        assert!((logit(expit(1.25_f64)) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn ratio_conversion() {
        let r = Ratio::new(100u64, 127);
        assert!((f64::from_ratio(&r) - 100.0 / 127.0).abs() < 1e-16);
        assert!((f32::from_ratio(&r) - 100.0f32 / 127.0).abs() < 1e-7);
    }
}
