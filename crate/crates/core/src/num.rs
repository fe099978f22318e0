//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All math is written against [`Real`], which is implemented for `f32` and
//! `f64`. Missing samples are carried in-band as a large negative sentinel so
//! that rasters stay plain arrays of scalars.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Missing-value sentinel used in memory and on disk.
pub const MISSING: f64 = -1.0e30;

/// Anything below this is treated as the missing sentinel.
const MISSING_THRESHOLD: f64 = -1.0e29;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn missing() -> Self {
        Self::lit(MISSING)
    }

    /// True for the sentinel and for NaN.
    #[inline]
    fn is_missing(self) -> bool {
        !(self > Self::lit(MISSING_THRESHOLD))
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_is_missing_in_both_widths() {
        assert!(f64::missing().is_missing());
        assert!(f32::missing().is_missing());
        assert!(f64::NAN.is_missing());
        assert!(!0.0f64.is_missing());
        assert!(!(-5.0f32).is_missing());
    }

    #[test]
    fn sentinel_survives_f32_round_trip() {
        let x = f64::missing() as f32;
        assert!(x.is_finite());
        assert!((x as f64).is_missing());
    }
}
