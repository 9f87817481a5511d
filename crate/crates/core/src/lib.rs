//! Conformalized selective regression.
//!
//! A regression model is allowed to abstain when its uncertainty about an
//! input is too high. Uncertainty comes from the width of a conformalized
//! quantile-regression interval: two quantile models give raw lower/upper
//! bounds, a held-out calibration set inflates them so that the interval
//! covers the truth with probability at least `1 - alpha`, and the resulting
//! width gates a shared point predictor.
//!
//! The crate also carries the evaluation framework used to compare
//! rejectors: coverage/error curves, a shared nMSE normalizer, the distance
//! of each curve to the ideal point `(coverage = 1, nMSE = 0)` and the
//! area under the curve.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the
//! experiment runner uses.

pub mod conformal;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod scalar;
pub mod selective;

pub use conformal::{
    calibrate, conformal_interval, conformal_rank, conformity_score, empirical_coverage,
    ConformalCalibration, PredictionInterval, QHat,
};
pub use dataset::{
    generate_synthetic, load_csv, split, DataSplit, Dataset, NoiseProfile, SynthSpec,
};
pub use error::{CsrError, Result};
pub use evaluation::{
    curve_auc, distance_to_ideal, mse_at_coverage, normalize, restricted_comparison,
    CoverageErrorCurve, EvalSummary, RawCurve,
};
pub use models::{
    knn::KnnEstimator, pinball::pinball_loss, pinball::QuantileLevel, train_point_model,
    train_quantile_pair, Family, Hyperparams, PointModel, QuantilePairModel,
};
pub use scalar::Scalar;
pub use selective::{
    decide, sweep_thresholds, Decision, Rejector, SelectiveOutput, ThresholdSweep,
};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type DataSplit64 = DataSplit<f64>;
pub type PointModel64 = PointModel<f64>;
pub type QuantilePairModel64 = QuantilePairModel<f64>;
pub type ConformalCalibration64 = ConformalCalibration<f64>;
pub type PredictionInterval64 = PredictionInterval<f64>;
pub type KnnEstimator64 = KnnEstimator<f64>;
pub type Rejector64 = Rejector<f64>;
pub type ThresholdSweep64 = ThresholdSweep<f64>;
pub type CoverageErrorCurve64 = CoverageErrorCurve<f64>;
pub type EvalSummary64 = EvalSummary<f64>;
