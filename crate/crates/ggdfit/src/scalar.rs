use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerical kernels are written against: f32 or f64.
///
/// Everything numeric in this crate (densities, special functions, estimators)
/// is generic over `Real`; the orchestration layers instantiate with `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + for<'a> Sum<&'a Self>
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an f64 literal or constant.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Conversion from a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize converts to any Real")
    }

    /// Widening view used when a kernel needs f64 scratch precision.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
