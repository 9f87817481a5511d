use csr_core::CsrError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Failures of the runner, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 1 for usage or configuration problems, 2 for bad input data, 3 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Internal(format!("{}: {err}", path.display()))
    }
}

impl From<CsrError> for CliError {
    fn from(err: CsrError) -> Self {
        let msg = err.to_string();
        match err {
            CsrError::Io { .. }
            | CsrError::Csv(_)
            | CsrError::MissingTargetColumn(_)
            | CsrError::NoFeatures
            | CsrError::TooFewRows { .. }
            | CsrError::InvalidDataset(_)
            | CsrError::SplitTooSmall { .. }
            | CsrError::DimensionMismatch { .. }
            | CsrError::Schema { .. }
            | CsrError::Json(_) => CliError::Data(msg),
            CsrError::BadFractions(_)
            | CsrError::BadAlpha(_)
            | CsrError::BadQuantileLevel(_)
            | CsrError::KTooLarge { .. }
            | CsrError::BadHyperparameter { .. }
            | CsrError::BadGrid(_) => CliError::Config(msg),
            _ => CliError::Internal(msg),
        }
    }
}
