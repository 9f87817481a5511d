//! Split-conformal calibration of a quantile pair.
//!
//! Conformity score of a calibration row is its signed distance outside the
//! raw interval, `max(y - f_u(x), f_l(x) - y)`. The threshold `q_hat` is the
//! order statistic of rank `ceil((n + 1)(1 - alpha))` among the ascending
//! scores; when that rank exceeds `n` the threshold is infinite and every
//! interval is unbounded. Intervals are `[f_l(x) - q_hat, f_u(x) + q_hat]`,
//! so the conformalized width is `f_u(x) - f_l(x) + 2 q_hat`: the threshold
//! is added once to each bound.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{CsrError, Result};
use crate::models::{check_alpha, QuantilePairModel};
use crate::scalar::{robust_ceil, total_cmp, Scalar};

pub const CALIBRATION_SCHEMA: &str = "csr.calibration.v1";

/// Conformal threshold: a finite order statistic or "infinite" when the
/// calibration set is too small for the requested alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QHat<S = f64> {
    Finite(S),
    Infinite,
}

impl<S: Scalar> QHat<S> {
    pub fn is_finite(self) -> bool {
        matches!(self, QHat::Finite(_))
    }

    /// The threshold as a scalar, `+inf` when infinite.
    pub fn value(self) -> S {
        match self {
            QHat::Finite(v) => v,
            QHat::Infinite => S::infinity(),
        }
    }
}

impl<S: Scalar> Serialize for QHat<S> {
    fn serialize<Z: Serializer>(&self, s: Z) -> std::result::Result<Z::Ok, Z::Error> {
        match self {
            QHat::Finite(v) => v.serialize(s),
            QHat::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de, S: Scalar> Deserialize<'de> for QHat<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(QHat::Finite(S::lit(v))),
            Repr::Tag(t) if t == "infinite" => Ok(QHat::Infinite),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("invalid q_hat `{t}`"))),
        }
    }
}

/// Signed distance of `y` outside `[lower_raw, upper_raw]`; negative when `y`
/// is strictly inside.
#[inline]
pub fn conformity_score<S: Scalar>(y: S, lower_raw: S, upper_raw: S) -> S {
    (y - upper_raw).max(lower_raw - y)
}

/// Crossed bounds collapse to their midpoint.
#[inline]
pub fn repair_crossing<S: Scalar>(lower: S, upper: S) -> (S, S) {
    if lower > upper {
        let mid = (lower + upper) / S::lit(2.0);
        (mid, mid)
    } else {
        (lower, upper)
    }
}

/// 1-based rank `ceil((n + 1)(1 - alpha))` of the conformal order statistic.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    robust_ceil((n as f64 + 1.0) * (1.0 - alpha)) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ConformalCalibration<S = f64> {
    pub alpha: S,
    pub q_hat: QHat<S>,
    pub n_cal: usize,
    /// One score per calibration row, in calibration order.
    pub scores: Vec<S>,
}

impl<S: Scalar> ConformalCalibration<S> {
    pub fn from_scores(scores: Vec<S>, alpha: S) -> Result<Self> {
        check_alpha(alpha)?;
        if scores.is_empty() {
            return Err(CsrError::Empty("calibration set"));
        }
        let n = scores.len();
        let rank = conformal_rank(n, alpha.as_f64());
        let q_hat = if rank > n {
            QHat::Infinite
        } else {
            let mut sorted = scores.clone();
            let (_, v, _) = sorted.select_nth_unstable_by(rank - 1, total_cmp);
            QHat::Finite(*v)
        };
        Ok(Self {
            alpha,
            q_hat,
            n_cal: n,
            scores,
        })
    }

    /// Audit document; scores are included only on request.
    pub fn to_json(&self, include_scores: bool) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a, S: Scalar> {
            schema: &'static str,
            alpha: S,
            q_hat: QHat<S>,
            n_cal: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            scores: Option<&'a [S]>,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            schema: CALIBRATION_SCHEMA,
            alpha: self.alpha,
            q_hat: self.q_hat,
            n_cal: self.n_cal,
            scores: include_scores.then_some(self.scores.as_slice()),
        })?)
    }

    /// Reads an audit document. A document without scores yields an empty
    /// `scores` vector.
    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(bound = "S: Scalar")]
        struct Doc<S> {
            schema: String,
            alpha: S,
            q_hat: QHat<S>,
            n_cal: usize,
            #[serde(default = "Vec::new")]
            scores: Vec<S>,
        }
        let doc: Doc<S> = serde_json::from_str(json)?;
        if doc.schema != CALIBRATION_SCHEMA {
            return Err(CsrError::Schema {
                expected: CALIBRATION_SCHEMA.into(),
                found: doc.schema,
            });
        }
        Ok(Self {
            alpha: doc.alpha,
            q_hat: doc.q_hat,
            n_cal: doc.n_cal,
            scores: doc.scores,
        })
    }
}

/// Scores every calibration row (after crossing repair) and derives `q_hat`.
pub fn calibrate<S: Scalar>(
    model: &QuantilePairModel<S>,
    cal: &Dataset<S>,
    alpha: S,
) -> Result<ConformalCalibration<S>> {
    check_alpha(alpha)?;
    if cal.is_empty() {
        return Err(CsrError::Empty("calibration set"));
    }
    let scores = cal
        .rows()
        .zip(cal.targets())
        .map(|(x, &y)| {
            let (l, u) = model.predict_raw(x)?;
            let (l, u) = repair_crossing(l, u);
            Ok(conformity_score(y, l, u))
        })
        .collect::<Result<Vec<S>>>()?;
    ConformalCalibration::from_scores(scores, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval<S = f64> {
    pub lower: S,
    pub upper: S,
    pub width: S,
}

impl<S: Scalar> PredictionInterval<S> {
    /// Conformalizes repaired raw bounds by `q_hat`.
    pub fn from_raw(lower_raw: S, upper_raw: S, q_hat: QHat<S>) -> Self {
        let (l, u) = repair_crossing(lower_raw, upper_raw);
        match q_hat {
            QHat::Finite(q) => Self {
                lower: l - q,
                upper: u + q,
                width: u - l + q + q,
            },
            QHat::Infinite => Self::unbounded(),
        }
    }

    pub fn unbounded() -> Self {
        Self {
            lower: S::neg_infinity(),
            upper: S::infinity(),
            width: S::infinity(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.width.is_finite()
    }

    pub fn contains(&self, y: S) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn midpoint(&self) -> Option<S> {
        self.is_bounded()
            .then(|| (self.lower + self.upper) / S::lit(2.0))
    }
}

pub fn conformal_interval<S: Scalar>(
    model: &QuantilePairModel<S>,
    calib: &ConformalCalibration<S>,
    x: &[S],
) -> Result<PredictionInterval<S>> {
    let (l, u) = model.predict_raw(x)?;
    Ok(PredictionInterval::from_raw(l, u, calib.q_hat))
}

/// Fraction of test rows whose target lies in its conformal interval.
pub fn empirical_coverage<S: Scalar>(
    model: &QuantilePairModel<S>,
    calib: &ConformalCalibration<S>,
    test: &Dataset<S>,
) -> Result<f64> {
    if test.is_empty() {
        return Err(CsrError::Empty("test set"));
    }
    let mut hit = 0usize;
    for (x, &y) in test.rows().zip(test.targets()) {
        if conformal_interval(model, calib, x)?.contains(y) {
            hit += 1;
        }
    }
    Ok(hit as f64 / test.n_rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{train_quantile_pair, Family, Hyperparams};
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        assert_eq!(conformity_score(5.0, 3.0, 6.0), -1.0);
        assert_eq!(conformity_score(7.0, 3.0, 6.0), 1.0);
        assert_eq!(conformity_score(3.0, 3.0, 6.0), 0.0);
    }

    fn nine() -> Vec<f64> {
        (1..=9).map(f64::from).collect()
    }

    #[test]
    fn q_hat_examples() {
        assert_eq!(conformal_rank(9, 0.1), 9);
        assert_eq!(
            ConformalCalibration::from_scores(nine(), 0.1)
                .unwrap()
                .q_hat,
            QHat::Finite(9.0)
        );
        assert_eq!(conformal_rank(9, 0.05), 10);
        assert_eq!(
            ConformalCalibration::from_scores(nine(), 0.05)
                .unwrap()
                .q_hat,
            QHat::Infinite
        );
        for alpha in [0.01, 0.2, 0.49] {
            assert_eq!(
                ConformalCalibration::from_scores(vec![3.0], alpha)
                    .unwrap()
                    .q_hat,
                QHat::Infinite
            );
        }
        // ceil(2 * 0.5) = 1, so a single score suffices at alpha = 0.5
        assert_eq!(
            ConformalCalibration::from_scores(vec![3.0], 0.5)
                .unwrap()
                .q_hat,
            QHat::Finite(3.0)
        );
    }

    #[test]
    fn scores_with_ties_and_negatives() {
        let c = ConformalCalibration::from_scores(vec![-1.0, 2.0, 2.0, 2.0, -3.0], 0.5).unwrap();
        // rank ceil(6 * 0.5) = 3 of [-3, -1, 2, 2, 2]
        assert_eq!(c.q_hat, QHat::Finite(2.0));
        let c = ConformalCalibration::from_scores(vec![-1.0, 2.0, 2.0, 2.0, -3.0], 0.7).unwrap();
        assert_eq!(c.q_hat, QHat::Finite(-1.0));
    }

    #[test]
    fn calibrate_errors() {
        assert!(matches!(
            ConformalCalibration::<f64>::from_scores(vec![], 0.1),
            Err(CsrError::Empty(_))
        ));
        assert!(matches!(
            ConformalCalibration::from_scores(vec![1.0], 1.0),
            Err(CsrError::BadAlpha(_))
        ));
    }

    #[test]
    fn interval_examples() {
        let iv = PredictionInterval::from_raw(3.0, 6.0, QHat::Finite(0.5));
        assert_eq!((iv.lower, iv.upper, iv.width), (2.5, 6.5, 4.0));
        let iv = PredictionInterval::from_raw(3.0, 6.0, QHat::Finite(0.0));
        assert_eq!((iv.lower, iv.upper, iv.width), (3.0, 6.0, 3.0));
        let iv = PredictionInterval::from_raw(3.0, 6.0, QHat::Infinite);
        assert!(!iv.is_bounded());
        assert_eq!(iv.width, f64::INFINITY);
        assert!(iv.contains(1e300));
        // crossed raw bounds repaired to the midpoint
        let iv = PredictionInterval::from_raw(6.0, 4.0, QHat::Finite(1.0));
        assert_eq!((iv.lower, iv.upper, iv.width), (4.0, 6.0, 2.0));
    }

    #[test]
    fn negative_q_hat_shrinks_interval() {
        let iv = PredictionInterval::from_raw(0.0, 4.0, QHat::Finite(-0.5));
        assert_eq!((iv.lower, iv.upper, iv.width), (0.5, 3.5, 3.0));
    }

    #[test]
    fn json_roundtrip() {
        let c = ConformalCalibration::from_scores(nine(), 0.1).unwrap();
        let full = ConformalCalibration::from_json(&c.to_json(true).unwrap()).unwrap();
        assert_eq!(full, c);
        let slim = c.to_json(false).unwrap();
        assert!(!slim.contains("scores"));
        assert!(slim.contains("\"schema\": \"csr.calibration.v1\""));
        let inf = ConformalCalibration::from_scores(nine(), 0.05).unwrap();
        let json = inf.to_json(false).unwrap();
        assert!(json.contains("\"q_hat\": \"infinite\""));
        assert_eq!(
            ConformalCalibration::<f64>::from_json(&json).unwrap().q_hat,
            QHat::Infinite
        );
    }

    fn cal_data(n: usize, seed: u64) -> Dataset<f64> {
        use crate::dataset::{generate_synthetic, NoiseProfile, SynthSpec};
        generate_synthetic(SynthSpec {
            n,
            noise_profile: NoiseProfile::HeteroscedasticLinear,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn in_sample_coverage_is_at_least_nominal() {
        let train = cal_data(300, 1);
        let cal = cal_data(100, 2);
        let pair =
            train_quantile_pair(&train, 0.1, Family::Linear, &Hyperparams::default()).unwrap();
        let calib = calibrate(&pair, &cal, 0.1).unwrap();
        // direct count on the calibration rows themselves
        let covered = cal
            .rows()
            .zip(cal.targets())
            .filter(|(x, &y)| conformal_interval(&pair, &calib, x).unwrap().contains(y))
            .count();
        assert!(covered >= 90, "{covered}");
        assert_eq!(
            empirical_coverage(&pair, &calib, &cal).unwrap(),
            covered as f64 / 100.0
        );
    }

    #[test]
    fn unbounded_intervals_cover_everything() {
        let train = cal_data(100, 1);
        let pair =
            train_quantile_pair(&train, 0.05, Family::Linear, &Hyperparams::default()).unwrap();
        let calib = calibrate(&pair, &train.subset(&[0, 1, 2]), 0.05).unwrap();
        assert_eq!(calib.q_hat, QHat::Infinite);
        assert_eq!(empirical_coverage(&pair, &calib, &train).unwrap(), 1.0);
        assert!(empirical_coverage(&pair, &calib, &train.subset(&[])).is_err());
    }

    #[test]
    fn width_shift_is_twice_q_hat() {
        let train = cal_data(200, 4);
        let pair =
            train_quantile_pair(&train, 0.2, Family::Linear, &Hyperparams::default()).unwrap();
        let calib = calibrate(&pair, &cal_data(50, 5), 0.2).unwrap();
        let q = calib.q_hat.value();
        for x in train.rows() {
            let (l, u) = pair.predict_raw(x).unwrap();
            let (l, u) = repair_crossing(l, u);
            let iv = conformal_interval(&pair, &calib, x).unwrap();
            assert!((iv.width - (u - l) - 2.0 * q).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn q_hat_monotone_in_alpha(scores in prop::collection::vec(-10.0f64..10.0, 1..40),
                                   a1 in 0.01f64..0.99, a2 in 0.01f64..0.99) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let q_lo = ConformalCalibration::from_scores(scores.clone(), lo).unwrap().q_hat.value();
            let q_hi = ConformalCalibration::from_scores(scores, hi).unwrap().q_hat.value();
            prop_assert!(q_lo >= q_hi);
        }
    }
}
