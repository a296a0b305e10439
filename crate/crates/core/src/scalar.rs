//! Scalar abstraction for the numeric kernels: f32 or f64.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the math kernels are generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion for serialization (files store f64).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("representable scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
