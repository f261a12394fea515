//! Scalar abstraction shared by the interpolation and cost-model code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar the numeric kernels are written against: `f32` or `f64`.
///
/// Everything that must be bit-reproducible (the scalar resize and the tiled
/// executor) is generic over the same `Real`, so a given instantiation always
/// takes one arithmetic path.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless for every `usize` the crate feeds in (pixel coordinates and counts).
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize always converts to a float")
    }

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 always converts to a float")
    }

    fn half() -> Self {
        Self::from_f64_lossy(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}
