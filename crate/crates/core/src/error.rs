use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        /// 1-based line number in the source file (header is line 1).
        row: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The leading principal minor of order `minor` (1-based) is not positive.
    #[error("matrix is not positive definite: leading minor {minor} has pivot {pivot:e}")]
    NotPositiveDefinite { minor: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("likelihood evaluation failed: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
