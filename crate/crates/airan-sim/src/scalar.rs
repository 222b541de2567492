//! Scalar abstraction over the float width used by the numerical core.

use std::fmt::{Debug, Display};

/// Floating-point scalar the tensor/graph machinery is generic over.
///
/// Implemented for `f32` and `f64`. The extra conversion helpers exist so
/// generic code can mix literals and config values (always `f64`) without
/// sprinkling `FromPrimitive::from_f64(..).unwrap()` everywhere.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssignOps
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal/config value into this scalar type.
    fn c(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("finite literal")
    }

    /// Widen to `f64` (exact for both supported widths' value ranges).
    fn f64(self) -> f64 {
        <Self as num_traits::ToPrimitive>::to_f64(&self).expect("finite scalar")
    }

    /// Relative tolerance for gradient checks at this float width.
    fn grad_rtol() -> f64;
}

impl Scalar for f64 {
    fn grad_rtol() -> f64 {
        1e-4
    }
}

impl Scalar for f32 {
    fn grad_rtol() -> f64 {
        2e-2
    }
}
