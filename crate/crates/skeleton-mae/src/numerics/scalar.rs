//! Element type for tensors: f32 for training, f64 for verification oracles.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element of every tensor in the engine. Training runs at
/// f32; gradient oracles and equivalence checks instantiate the same code at
/// f64 so finite-difference tolerances stay meaningful.
pub trait Scalar:
    num_traits::Float + num_traits::NumCast + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    /// Named to avoid colliding with `num_traits::ToPrimitive::to_f64`.
    fn widen(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}
