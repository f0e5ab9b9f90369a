use std::path::PathBuf;

use thiserror::Error;

use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("non-positive price {value} at row {row}, asset {asset}")]
    NonPositivePrice { row: usize, asset: String, value: f64 },
    #[error("missing or non-finite price at row {row}, asset {asset}")]
    MissingPrice { row: usize, asset: String },
    #[error("need at least {needed} observations, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("duplicate asset column {0:?}")]
    DuplicateAsset(String),
    #[error("asset {0} has no value in the first row to carry forward")]
    LeadingGap(String),
    #[error("date labels are not strictly increasing at row {row} ({label})")]
    UnorderedDates { row: usize, label: String },
    #[error("asset {0} has zero variance")]
    ZeroVariance(String),
    #[error("return {value} <= -1 at row {row}, asset {asset}")]
    InvalidReturn { row: usize, asset: String, value: f64 },
    #[error("risk matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("target return {target} outside the attainable range [{min}, {max}]")]
    TargetOutOfRange { target: f64, min: f64, max: f64 },
    #[error("asset columns do not align: {0}")]
    AssetAlignment(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("optimization failed{}: {source}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Solver {
        context: Option<String>,
        #[source]
        source: QpError,
    },
    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<QpError> for Error {
    fn from(source: QpError) -> Self {
        Error::Solver {
            context: None,
            source,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a context note to solver failures; other variants pass through.
    pub(crate) fn in_context(self, note: impl FnOnce() -> String) -> Self {
        match self {
            Error::Solver {
                context: None,
                source,
            } => Error::Solver {
                context: Some(note()),
                source,
            },
            other => other,
        }
    }
}
