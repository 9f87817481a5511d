use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the whole pipeline is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Total order on non-NaN scalars; NaN sorts last.
#[inline]
pub(crate) fn total_cmp<S: Scalar>(a: &S, b: &S) -> std::cmp::Ordering {
    a.partial_cmp(b)
        .unwrap_or_else(|| match (a.is_nan(), b.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            _ => std::cmp::Ordering::Less,
        })
}

/// `ceil(x)` that ignores floating-point noise just above an integer, so
/// `ceil(0.55 * 100)` is 55 rather than 56.
pub(crate) fn robust_ceil(x: f64) -> f64 {
    let slack = 1e-12 * x.abs().max(1.0);
    (x - slack).ceil()
}

/// Same idea for `floor`.
pub(crate) fn robust_floor(x: f64) -> f64 {
    let slack = 1e-12 * x.abs().max(1.0);
    (x + slack).floor()
}
