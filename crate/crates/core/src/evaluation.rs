//! Coverage/error curves and the scores used to compare rejectors on them.
//!
//! Every curve point carries the MSE of the accepted rows at one coverage
//! level. Curves being compared share one normalizer, the largest MSE found
//! on any point of any of them, giving nMSE in `[0, 1]`. A rejector's
//! headline number is the smallest Euclidean distance from its curve to the
//! ideal point `(coverage 1, nMSE 0)`; the trapezoidal area under the curve
//! and nMSE at fixed high coverages are reported alongside.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{CsrError, Result};
use crate::scalar::Scalar;
use crate::selective::ThresholdSweep;

pub const CURVE_SCHEMA: &str = "csr.curve.v1";
pub const SUMMARY_SCHEMA: &str = "csr.summary.v1";
pub const RESTRICTED_LEVELS: [f64; 4] = [0.8, 0.85, 0.9, 0.95];

/// Mean squared residual over the accepted rows, summed in the given order.
pub fn mse_at_coverage<S: Scalar>(
    targets: &[S],
    predictions: &[S],
    accepted: &[usize],
) -> Result<S> {
    if accepted.is_empty() {
        return Err(CsrError::Empty("accepted set"));
    }
    if targets.len() != predictions.len() {
        return Err(CsrError::DimensionMismatch {
            expected: targets.len(),
            found: predictions.len(),
        });
    }
    let mut sum = S::zero();
    for &i in accepted {
        if i >= targets.len() {
            return Err(CsrError::InvalidDataset(format!(
                "row index {i} out of range"
            )));
        }
        let r = targets[i] - predictions[i];
        sum = sum + r * r;
    }
    Ok(sum / S::from_usize_lossy(accepted.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPoint<S = f64> {
    pub coverage: S,
    pub mse: S,
}

/// Coverage/MSE curve before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCurve<S = f64> {
    pub method: String,
    pub dataset: String,
    pub points: Vec<RawPoint<S>>,
}

impl<S: Scalar> RawCurve<S> {
    /// One point per non-empty sweep level, at its realized coverage.
    /// Levels that realize the same coverage as the previous one are skipped.
    pub fn from_sweep(
        method: impl Into<String>,
        dataset: impl Into<String>,
        sweep: &ThresholdSweep<S>,
        targets: &[S],
        predictions: &[S],
    ) -> Result<Self> {
        if targets.len() != sweep.n_rows() {
            return Err(CsrError::DimensionMismatch {
                expected: sweep.n_rows(),
                found: targets.len(),
            });
        }
        let mut points: Vec<RawPoint<S>> = Vec::with_capacity(sweep.points.len());
        for p in &sweep.points {
            if p.accepted == 0
                || points
                    .last()
                    .is_some_and(|last| last.coverage >= p.realized_coverage)
            {
                continue;
            }
            let set = sweep.accepted_set(p.target_coverage.as_f64())?;
            points.push(RawPoint {
                coverage: p.realized_coverage,
                mse: mse_at_coverage(targets, predictions, &set)?,
            });
        }
        Ok(Self {
            method: method.into(),
            dataset: dataset.into(),
            points,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint<S = f64> {
    pub coverage: S,
    pub mse: S,
    pub nmse: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageErrorCurve<S = f64> {
    pub method: String,
    pub dataset: String,
    pub normalizer: S,
    pub points: Vec<CurvePoint<S>>,
}

/// Divides every MSE by the largest MSE over all points of all curves.
/// A zero normalizer yields all-zero nMSE.
pub fn normalize<S: Scalar>(curves: Vec<RawCurve<S>>) -> Vec<CoverageErrorCurve<S>> {
    let normalizer = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.mse))
        .fold(S::zero(), S::max);
    curves
        .into_iter()
        .map(|c| CoverageErrorCurve {
            points: c
                .points
                .iter()
                .map(|p| CurvePoint {
                    coverage: p.coverage,
                    mse: p.mse,
                    nmse: if normalizer > S::zero() {
                        p.mse / normalizer
                    } else {
                        S::zero()
                    },
                })
                .collect(),
            method: c.method,
            dataset: c.dataset,
            normalizer,
        })
        .collect()
}

/// Smallest distance from a curve point to `(1, 0)`, with the point that
/// attains it. Equal distances resolve toward higher coverage.
pub fn distance_to_ideal<S: Scalar>(curve: &CoverageErrorCurve<S>) -> Result<(S, CurvePoint<S>)> {
    let mut best: Option<(S, CurvePoint<S>)> = None;
    for p in &curve.points {
        let d = ((S::one() - p.coverage).powi(2) + p.nmse.powi(2)).sqrt();
        let better = match &best {
            None => true,
            Some((bd, bp)) => d < *bd || (d == *bd && p.coverage > bp.coverage),
        };
        if better {
            best = Some((d, *p));
        }
    }
    best.ok_or(CsrError::Empty("curve"))
}

/// Trapezoidal area under nMSE over coverage, divided by the coverage span.
pub fn curve_auc<S: Scalar>(curve: &CoverageErrorCurve<S>) -> Result<S> {
    let pts = &curve.points;
    if pts.len() < 2 {
        return Err(CsrError::Empty(
            "curve (need at least two points for an area)",
        ));
    }
    let half = S::lit(0.5);
    let area: S = pts
        .windows(2)
        .map(|w| (w[1].coverage - w[0].coverage) * (w[0].nmse + w[1].nmse) * half)
        .sum();
    let span = pts[pts.len() - 1].coverage - pts[0].coverage;
    if span <= S::zero() {
        return Err(CsrError::InvalidDataset(
            "curve coverages must be strictly ascending".into(),
        ));
    }
    Ok(area / span)
}

/// nMSE at `level`, linearly interpolated between the bracketing points.
pub fn interpolate_nmse<S: Scalar>(curve: &CoverageErrorCurve<S>, level: S) -> Result<S> {
    let pts = &curve.points;
    let out_of_range = || CsrError::LevelOutOfRange {
        level: level.as_f64(),
        min: pts.first().map_or(f64::NAN, |p| p.coverage.as_f64()),
        max: pts.last().map_or(f64::NAN, |p| p.coverage.as_f64()),
    };
    let tol = S::lit(1e-12);
    if let Some(p) = pts.iter().find(|p| (p.coverage - level).abs() <= tol) {
        return Ok(p.nmse);
    }
    let w = pts
        .windows(2)
        .find(|w| w[0].coverage < level && level < w[1].coverage)
        .ok_or_else(out_of_range)?;
    let t = (level - w[0].coverage) / (w[1].coverage - w[0].coverage);
    Ok(w[0].nmse + t * (w[1].nmse - w[0].nmse))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelValue<S = f64> {
    pub level: S,
    pub nmse: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary<S = f64> {
    pub method: String,
    pub auc: S,
    pub best_coverage: S,
    pub best_nmse: S,
    pub distance: S,
    pub restricted: Vec<LevelValue<S>>,
}

pub fn summarize<S: Scalar>(
    curve: &CoverageErrorCurve<S>,
    levels: &[f64],
) -> Result<EvalSummary<S>> {
    let (distance, best) = distance_to_ideal(curve)?;
    let restricted = levels
        .iter()
        .map(|&l| {
            let level = S::lit(l);
            Ok(LevelValue {
                level,
                nmse: interpolate_nmse(curve, level)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalSummary {
        method: curve.method.clone(),
        auc: curve_auc(curve)?,
        best_coverage: best.coverage,
        best_nmse: best.nmse,
        distance,
        restricted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodValue<S = f64> {
    pub method: String,
    pub nmse: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedRow<S = f64> {
    pub level: S,
    pub values: Vec<MethodValue<S>>,
    /// Lowest nMSE; the earlier summary wins a tie.
    pub winner: String,
}

/// Per level, each rejector's (interpolated) nMSE and the lowest one.
pub fn restricted_comparison<S: Scalar>(
    summaries: &[EvalSummary<S>],
    levels: &[f64],
) -> Result<Vec<RestrictedRow<S>>> {
    if summaries.is_empty() {
        return Err(CsrError::Empty("summary list"));
    }
    levels
        .iter()
        .map(|&l| {
            let level = S::lit(l);
            let values = summaries
                .iter()
                .map(|s| {
                    let v = s
                        .restricted
                        .iter()
                        .find(|v| (v.level - level).abs() <= S::lit(1e-12))
                        .ok_or(CsrError::LevelOutOfRange {
                            level: l,
                            min: f64::NAN,
                            max: f64::NAN,
                        })?;
                    Ok(MethodValue {
                        method: s.method.clone(),
                        nmse: v.nmse,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut winner = &values[0];
            for v in &values[1..] {
                if v.nmse < winner.nmse {
                    winner = v;
                }
            }
            Ok(RestrictedRow {
                level,
                winner: winner.method.clone(),
                values,
            })
        })
        .collect()
}

/// CSV with columns `schema,method,dataset,coverage,mse,nmse`.
pub fn write_curve_csv<S: Scalar, W: Write>(
    writer: W,
    curve: &CoverageErrorCurve<S>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["schema", "method", "dataset", "coverage", "mse", "nmse"])?;
    for p in &curve.points {
        w.write_record([
            CURVE_SCHEMA.to_string(),
            curve.method.clone(),
            curve.dataset.clone(),
            p.coverage.to_string(),
            p.mse.to_string(),
            p.nmse.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-run evaluation document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument<S = f64> {
    pub schema: String,
    pub dataset: String,
    pub seed: u64,
    pub normalizer: S,
    pub rejectors: Vec<EvalSummary<S>>,
    pub restricted: Vec<RestrictedRow<S>>,
}

impl<S: Scalar> SummaryDocument<S> {
    pub fn new(
        dataset: impl Into<String>,
        seed: u64,
        curves: &[CoverageErrorCurve<S>],
        levels: &[f64],
    ) -> Result<Self> {
        let rejectors = curves
            .iter()
            .map(|c| summarize(c, levels))
            .collect::<Result<Vec<_>>>()?;
        let restricted = restricted_comparison(&rejectors, levels)?;
        Ok(Self {
            schema: SUMMARY_SCHEMA.to_owned(),
            dataset: dataset.into(),
            seed,
            normalizer: curves.first().map_or(S::zero(), |c| c.normalizer),
            rejectors,
            restricted,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(json)?;
        if doc.schema != SUMMARY_SCHEMA {
            return Err(CsrError::Schema {
                expected: SUMMARY_SCHEMA.into(),
                found: doc.schema,
            });
        }
        Ok(doc)
    }
}
