//! Scalar abstraction for the distribution and cost-complexity algebra.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the pure numeric kernels are generic over (f32 or f64).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Shorthand for lossy conversion from f64 constants.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must convert into the scalar type")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Debug + Display + Send + Sync + 'static
{
}
