//! Scalar abstraction shared by the numeric parts of the crate.
//!
//! Cost modelling, deadline arithmetic and priority keys are written against
//! [`Scalar`] so they can be evaluated in `f32` or `f64`. The event loop and
//! the recorded timelines are always `f64`: a four hour trace at `f32`
//! resolution cannot represent millisecond token gaps.

use std::cmp::Ordering;
use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// IEEE total order, so keys built from scalars can be sorted.
    fn total_order(&self, other: &Self) -> Ordering;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Token count to scalar.
    #[inline]
    fn tokens(n: u64) -> Self {
        Self::from_u64(n).expect("token count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    #[inline]
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Scalar for f64 {
    #[inline]
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}
