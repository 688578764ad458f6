//! Scalar abstraction for reported metric ratios.
//!
//! All error and agreement counting in this crate is done on integers;
//! only the final ratios (WER, accuracy, precision/recall/F1) are
//! converted to a floating-point type. Functions that report ratios are
//! generic over [`Scalar`] so callers can pick f32 or f64. The crate
//! root exposes f64 aliases for the common case.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar used for metric ratios.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

/// Ratio of two counts. Caller guarantees `den > 0`.
pub fn ratio<F: Scalar>(num: u64, den: u64) -> F {
    debug_assert!(den > 0);
    F::from_u64(num).unwrap() / F::from_u64(den).unwrap()
}

/// Ratio of two counts, defined as 0 when the denominator is 0.
///
/// This is the convention used for precision/recall/F1 on unsupported
/// tokens: a zero denominator yields 0, never NaN.
pub fn ratio_or_zero<F: Scalar>(num: u64, den: u64) -> F {
    if den == 0 {
        F::zero()
    } else {
        ratio(num, den)
    }
}
