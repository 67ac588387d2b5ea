//! Shared error type for the pipeline.

use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
///
/// The variants split into three families that the command-line tool maps to
/// distinct exit codes: argument problems, numerical failures, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A factorization pivot fell below the positive-definiteness floor.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("tail fit failed: {0}")]
    TailFit(String),

    #[error("noise stream exhausted after {steps} steps")]
    StreamExhausted { steps: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad arguments rather than by computation.
    pub fn is_argument_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::DimensionCap { .. }
        )
    }

    /// True for file-system and parsing errors.
    pub fn is_io_error(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Parse { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
