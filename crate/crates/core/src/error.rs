use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor extent did not match what an operation requires.
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: String,
        got: String,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{0}: empty batch")]
    EmptyBatch(&'static str),

    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("training diverged at step {step}: non-finite loss")]
    Divergence { step: usize },

    #[error("malformed PPM {path}: {reason}")]
    Ppm { path: PathBuf, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Dimension {
            op,
            axis,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Ppm { .. } | Error::Csv(_))
    }
}
