use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient sample: need at least {needed} rows, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    /// A matrix that must be positive definite failed its factorization.
    /// `batch_size` is the number of rows the matrix was estimated from
    /// (0 when the matrix was supplied directly).
    #[error("degenerate matrix (batch size {batch_size}): {detail}")]
    DegenerateMatrix { batch_size: usize, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("not found: {path} (replication {replication:?})")]
    NotFound {
        path: PathBuf,
        replication: Option<usize>,
    },

    #[error("format error in {file}: {detail}")]
    Format { file: PathBuf, detail: String },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("undefined policy cell: {0}")]
    UndefinedCell(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(detail: impl Into<String>) -> Self {
        Error::DegenerateMatrix {
            batch_size: 0,
            detail: detail.into(),
        }
    }

    /// Attach the row count a matrix was estimated from.
    pub(crate) fn with_batch_size(self, n: usize) -> Self {
        match self {
            Error::DegenerateMatrix { detail, .. } => Error::DegenerateMatrix {
                batch_size: n,
                detail,
            },
            other => other,
        }
    }
}
