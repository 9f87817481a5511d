//! Pinball (check) loss, whose minimizer over a sample is its tau-quantile.

use serde::{Deserialize, Serialize};

use crate::error::{CsrError, Result};
use crate::scalar::Scalar;

/// Quantile level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuantileLevel<S = f64>(S);

impl<S: Scalar> QuantileLevel<S> {
    pub fn new(tau: S) -> Result<Self> {
        if tau > S::zero() && tau < S::one() {
            Ok(Self(tau))
        } else {
            Err(CsrError::BadQuantileLevel(tau.as_f64()))
        }
    }

    pub fn tau(self) -> S {
        self.0
    }
}

/// `tau * (y - y_hat)` when `y >= y_hat`, otherwise `(1 - tau) * (y_hat - y)`.
#[inline]
pub fn pinball_loss<S: Scalar>(y: S, y_hat: S, tau: QuantileLevel<S>) -> S {
    let tau = tau.tau();
    if y >= y_hat {
        tau * (y - y_hat)
    } else {
        (S::one() - tau) * (y_hat - y)
    }
}

/// Lower empirical tau-quantile: the order statistic at rank `ceil(tau * n)`
/// (1-based). Minimizes the summed pinball loss over `values`.
pub(crate) fn empirical_quantile<S: Scalar>(values: &mut [S], tau: S) -> S {
    debug_assert!(!values.is_empty());
    let n = values.len();
    let rank = crate::scalar::robust_ceil(tau.as_f64() * n as f64).clamp(1.0, n as f64) as usize;
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, crate::scalar::total_cmp);
    *v
}
