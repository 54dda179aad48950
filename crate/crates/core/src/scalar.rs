//! Scalar abstractions.
//!
//! Feature weights, SVM parameters and classification metrics are generic over
//! [`Real`] (implemented for `f32` and `f64`). Agreement statistics only need
//! field arithmetic over counts, so they are generic over [`Field`], which is
//! additionally implemented for exact rationals.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar used by the numeric core.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` constant, rounding when `Self` is narrower.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 constant representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Scalar for ratio-of-counts statistics. Exact when instantiated with a
/// rational type.
pub trait Field: Num + Clone + PartialOrd + Debug {
    fn from_count(n: u64) -> Self;
    fn approx_f64(&self) -> f64;
}

impl Field for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn approx_f64(&self) -> f64 {
        *self
    }
}

impl Field for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn approx_f64(&self) -> f64 {
        f64::from(*self)
    }
}

macro_rules! rational_field {
    ($int:ty) => {
        impl Field for Ratio<$int> {
            fn from_count(n: u64) -> Self {
                Ratio::from_integer(n as $int)
            }
            fn approx_f64(&self) -> f64 {
                self.to_f64().unwrap_or(f64::NAN)
            }
        }
    };
}

rational_field!(i64);
rational_field!(i128);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lit_round_trips_for_both_widths() {
        assert_eq!(<f64 as Real>::lit(0.25), 0.25);
        assert_eq!(<f32 as Real>::lit(0.25), 0.25f32);
        assert_eq!(<f32 as Real>::from_count(7), 7.0);
    }

    #[test]
    fn rational_field_is_exact() {
        let third = Ratio::<i64>::from_count(1) / Ratio::from_count(3);
        assert_eq!(third * Ratio::from_count(3), Ratio::from_count(1));
        assert!((third.approx_f64() - 1.0 / 3.0).abs() < 1e-15);
    }
}
