//! Exact k-nearest-neighbour estimates of the conditional mean and variance.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CsrError, Result};
use crate::scalar::{total_cmp, Scalar};

/// Linear-scan kNN over stored rows, Euclidean distance, ties broken by the
/// lower stored row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnEstimator<S = f64> {
    k: usize,
    n_features: usize,
    features: Vec<S>,
    targets: Vec<S>,
}

impl<S: Scalar> KnnEstimator<S> {
    pub fn fit(data: &Dataset<S>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(CsrError::BadHyperparameter {
                key: "k".into(),
                reason: "must be positive".into(),
            });
        }
        if k > data.n_rows() {
            return Err(CsrError::KTooLarge {
                k,
                rows: data.n_rows(),
            });
        }
        Ok(Self {
            k,
            n_features: data.n_features(),
            features: data.features().to_vec(),
            targets: data.targets().to_vec(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_stored(&self) -> usize {
        self.targets.len()
    }

    /// Stored row indices of the k nearest neighbours, nearest first.
    pub fn neighbors(&self, x: &[S]) -> Result<Vec<usize>> {
        if x.len() != self.n_features {
            return Err(CsrError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let mut dist: Vec<(S, usize)> = self
            .features
            .chunks_exact(self.n_features)
            .enumerate()
            .map(|(i, row)| {
                let d = row
                    .iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                (d, i)
            })
            .collect();
        let cmp = |a: &(S, usize), b: &(S, usize)| total_cmp(&a.0, &b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_unstable_by(cmp);
        Ok(dist.into_iter().map(|(_, i)| i).collect())
    }

    /// Mean of the neighbours' targets and their population variance
    /// (divisor k).
    pub fn mean_variance(&self, x: &[S]) -> Result<(S, S)> {
        let idx = self.neighbors(x)?;
        let k = S::from_usize_lossy(idx.len());
        let mean = idx.iter().map(|&i| self.targets[i]).sum::<S>() / k;
        let var = idx
            .iter()
            .map(|&i| (self.targets[i] - mean).powi(2))
            .sum::<S>()
            / k;
        Ok((mean, var))
    }
}
