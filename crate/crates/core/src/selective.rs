//! Reject option: a rejector scores each input's uncertainty `u(x)` and the
//! shared point model's prediction is delivered only when `u(x) < lambda`.
//!
//! Coverage is driven by rank selection: for a target coverage `c` over `n`
//! rows, the `ceil(c n)` rows with the lowest uncertainty are accepted (ties
//! by row index), and `lambda(c)` is placed halfway to the next distinct
//! score so that thresholding reproduces the same set whenever no tie
//! straddles the cut.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalCalibration, PredictionInterval};
use crate::dataset::Dataset;
use crate::error::{CsrError, Result};
use crate::models::knn::KnnEstimator;
use crate::models::{PointModel, QuantilePairModel};
use crate::scalar::{robust_ceil, total_cmp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectorKind {
    Csr,
    KnnVariance,
}

impl RejectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectorKind::Csr => "csr",
            RejectorKind::KnnVariance => "knn_variance",
        }
    }
}

impl fmt::Display for RejectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csr" => Ok(RejectorKind::Csr),
            "knn_variance" | "knn" => Ok(RejectorKind::KnnVariance),
            other => Err(format!(
                "unknown rejector `{other}` (expected csr or knn_variance)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejector<S = f64> {
    /// Conformalized interval width.
    Csr {
        pair: QuantilePairModel<S>,
        calibration: ConformalCalibration<S>,
    },
    /// kNN estimate of the conditional variance.
    KnnVariance(KnnEstimator<S>),
}

impl<S: Scalar> Rejector<S> {
    pub fn kind(&self) -> RejectorKind {
        match self {
            Rejector::Csr { .. } => RejectorKind::Csr,
            Rejector::KnnVariance(_) => RejectorKind::KnnVariance,
        }
    }

    /// Conformal interval for CSR; `None` for rejectors without one.
    pub fn interval(&self, x: &[S]) -> Result<Option<PredictionInterval<S>>> {
        match self {
            Rejector::Csr { pair, calibration } => {
                let (l, u) = pair.predict_raw(x)?;
                Ok(Some(PredictionInterval::from_raw(l, u, calibration.q_hat)))
            }
            Rejector::KnnVariance(_) => Ok(None),
        }
    }

    /// Non-negative uncertainty score, `+inf` for CSR with an infinite threshold.
    pub fn uncertainty(&self, x: &[S]) -> Result<S> {
        match self {
            Rejector::Csr { .. } => Ok(self.interval(x)?.map_or(S::infinity(), |iv| iv.width)),
            Rejector::KnnVariance(knn) => Ok(knn.mean_variance(x)?.1),
        }
    }

    pub fn uncertainties(&self, data: &Dataset<S>) -> Result<Vec<S>> {
        data.rows().map(|x| self.uncertainty(x)).collect()
    }
}

/// Which value an accepted input receives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    /// The shared point model, identical across rejectors.
    #[default]
    PointModel,
    /// Midpoint of the conformal interval when one is bounded; otherwise
    /// falls back to the point model.
    IntervalMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision<S = f64> {
    Predicted {
        value: S,
        interval: Option<PredictionInterval<S>>,
    },
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectiveOutput<S = f64> {
    pub decision: Decision<S>,
    pub uncertainty: S,
}

impl<S> SelectiveOutput<S> {
    pub fn is_rejected(&self) -> bool {
        matches!(self.decision, Decision::Rejected)
    }
}

/// Predicts when `uncertainty(x) < lambda`, rejects otherwise (including
/// equality).
pub fn decide<S: Scalar>(
    rejector: &Rejector<S>,
    point_model: &PointModel<S>,
    x: &[S],
    lambda: S,
) -> Result<SelectiveOutput<S>> {
    decide_with(
        rejector,
        point_model,
        x,
        lambda,
        PredictionSource::PointModel,
    )
}

pub fn decide_with<S: Scalar>(
    rejector: &Rejector<S>,
    point_model: &PointModel<S>,
    x: &[S],
    lambda: S,
    source: PredictionSource,
) -> Result<SelectiveOutput<S>> {
    if !lambda.is_finite() {
        return Err(CsrError::NonFiniteThreshold);
    }
    let point = point_model.predict(x)?;
    let interval = rejector.interval(x)?;
    let uncertainty = match &interval {
        Some(iv) => iv.width,
        None => rejector.uncertainty(x)?,
    };
    let decision = if uncertainty < lambda {
        let value = match source {
            PredictionSource::PointModel => point,
            PredictionSource::IntervalMidpoint => {
                interval.and_then(|iv| iv.midpoint()).unwrap_or(point)
            }
        };
        Decision::Predicted { value, interval }
    } else {
        Decision::Rejected
    };
    Ok(SelectiveOutput {
        decision,
        uncertainty,
    })
}

/// `{step, 2 step, ..., 1}`; `1 / step` must be a whole number.
pub fn coverage_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CsrError::BadGrid(format!("step {step} outside (0, 1]")));
    }
    let count = (1.0 / step).round();
    if ((1.0 / step) - count).abs() > 1e-9 {
        return Err(CsrError::BadGrid(format!(
            "1 / {step} is not a whole number"
        )));
    }
    let count = count as usize;
    Ok((1..=count)
        .map(|i| if i == count { 1.0 } else { i as f64 * step })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<S = f64> {
    pub target_coverage: S,
    pub realized_coverage: S,
    pub lambda: S,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep<S = f64> {
    /// Uncertainty of each test row, in row order.
    pub scores: Vec<S>,
    /// Row indices ordered by `(score, row index)`.
    pub order: Vec<usize>,
    pub points: Vec<SweepPoint<S>>,
}

fn accepted_count(c: f64, n: usize) -> usize {
    (robust_ceil(c * n as f64).max(0.0) as usize).min(n)
}

/// Threshold that accepts the `m` lowest of the ascending `sorted` scores
/// under a strict `<` test.
fn lambda_for<S: Scalar>(sorted: &[S], m: usize) -> S {
    let n = sorted.len();
    let half = S::lit(0.5);
    let above = |a: S| {
        if a.is_finite() {
            a + half * a.abs().max(S::one())
        } else {
            a
        }
    };
    if m == 0 {
        return sorted[0];
    }
    let a = sorted[m - 1];
    match sorted[m..].iter().find(|&&b| b > a) {
        Some(&b) if b.is_finite() => a + (b - a) * half,
        Some(_) => above(a),
        None => above(sorted[n - 1]),
    }
}

impl<S: Scalar> ThresholdSweep<S> {
    pub fn from_scores(scores: Vec<S>, grid: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(CsrError::Empty("test set"));
        }
        validate_grid(grid)?;
        let n = scores.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| total_cmp(&scores[a], &scores[b]).then(a.cmp(&b)));
        let sorted: Vec<S> = order.iter().map(|&i| scores[i]).collect();
        let points = grid
            .iter()
            .map(|&c| {
                let m = accepted_count(c, n);
                SweepPoint {
                    target_coverage: S::lit(c),
                    realized_coverage: S::from_usize_lossy(m) / S::from_usize_lossy(n),
                    lambda: lambda_for(&sorted, m),
                    accepted: m,
                }
            })
            .collect();
        Ok(Self {
            scores,
            order,
            points,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.scores.len()
    }

    /// Row indices accepted at coverage `c` (which must be a grid value),
    /// ascending.
    pub fn accepted_set(&self, c: f64) -> Result<Vec<usize>> {
        let point = self
            .points
            .iter()
            .find(|p| (p.target_coverage.as_f64() - c).abs() <= 1e-12)
            .ok_or(CsrError::CoverageNotInGrid(c))?;
        let mut set = self.order[..point.accepted].to_vec();
        set.sort_unstable();
        Ok(set)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(CsrError::BadGrid("empty grid".into()));
    }
    if grid.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(CsrError::BadGrid("coverage outside [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CsrError::BadGrid("coverages not strictly ascending".into()));
    }
    Ok(())
}

/// Scores every test row once and realizes each grid coverage.
pub fn sweep_thresholds<S: Scalar>(
    rejector: &Rejector<S>,
    test: &Dataset<S>,
    grid: &[f64],
) -> Result<ThresholdSweep<S>> {
    ThresholdSweep::from_scores(rejector.uncertainties(test)?, grid)
}

/// CSV with columns `rejector,target_coverage,realized_coverage,lambda`.
pub fn write_sweeps_csv<S: Scalar, W: Write>(
    writer: W,
    sweeps: &[(&str, &ThresholdSweep<S>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rejector", "target_coverage", "realized_coverage", "lambda"])?;
    for (name, sweep) in sweeps {
        for p in &sweep.points {
            w.write_record([
                name.to_string(),
                p.target_coverage.to_string(),
                p.realized_coverage.to_string(),
                p.lambda.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
