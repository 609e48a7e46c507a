//! Scalar abstraction: all engine math is generic over an IEEE float type.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the engine: `f32` or `f64`.
///
/// `RealField` supplies the transcendental functions and lets the same code
/// drive `nalgebra`'s complex linear algebra via `Complex<T>`.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Sum + Debug + Display + LowerExp + Send + Sync
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for pulling `f64` literals into the working scalar type.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}
