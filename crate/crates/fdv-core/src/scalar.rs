//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`], which is
//! `f32` or `f64` in practice. The training pipeline instantiates with
//! `f64` (see the aliases at the crate root) so that finite-difference
//! gradient checks are meaningful.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar usable by the numeric core.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64` (exact for `f64` itself).
    fn cast(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    /// One draw from N(0, 1).
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    #[inline]
    fn cast(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }

    #[inline]
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Real for f64 {
    #[inline]
    fn cast(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    #[inline]
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
