use core::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point scalar used by the estimation math: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Step used by central finite differences.
    fn fd_step() -> Self;
}

impl Real for f32 {
    fn fd_step() -> Self {
        1e-3
    }
}

impl Real for f64 {
    fn fd_step() -> Self {
        1e-6
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}
