use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CsrError>;

#[derive(Debug, Error)]
pub enum CsrError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing target column `{0}`")]
    MissingTargetColumn(String),
    #[error("no feature columns besides the target")]
    NoFeatures,
    #[error("too few valid rows: {found} (need at least {required})")]
    TooFewRows { found: usize, required: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid split fractions {0:?}: must be positive and sum to 1")]
    BadFractions([f64; 3]),
    #[error("dataset of {rows} rows is too small to populate all split parts")]
    SplitTooSmall { rows: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("quantile level must lie in (0, 1), got {0}")]
    BadQuantileLevel(f64),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k = {k} exceeds the {rows} stored rows")]
    KTooLarge { k: usize, rows: usize },
    #[error("invalid hyperparameter `{key}`: {reason}")]
    BadHyperparameter { key: String, reason: String },
    #[error("invalid coverage grid: {0}")]
    BadGrid(String),
    #[error("coverage {0} is not on the sweep grid")]
    CoverageNotInGrid(f64),
    #[error("coverage level {level} lies outside the curve range [{min}, {max}]")]
    LevelOutOfRange { level: f64, min: f64, max: f64 },
    #[error("threshold must be finite")]
    NonFiniteThreshold,
    #[error("unsupported document schema `{found}` (expected `{expected}`)")]
    Schema { expected: String, found: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
