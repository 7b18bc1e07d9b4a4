//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the orbital, resource, energy, learning and
/// metric math. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Converts an integer count into this scalar type.
    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_pi<T: Scalar>(angle: T) -> T {
    let two_pi = T::TAU();
    let mut a = angle % two_pi;
    if a > T::PI() {
        a = a - two_pi;
    } else if a <= -T::PI() {
        a = a + two_pi;
    }
    a
}
