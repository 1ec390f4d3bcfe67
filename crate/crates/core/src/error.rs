use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Input data violates a structural requirement (shape, labels, subjects).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A configuration value or call argument is out of its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("kernel bank is not fitted")]
    NotFitted,

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    /// An internal consistency check failed. Always a bug.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit status for the command-line tool: 2 for bad arguments,
    /// 3 for bad or missing data, 4 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::InvalidData(_)
            | Error::Shape(_)
            | Error::NotFitted => 3,
            Error::Linalg(_) | Error::Invariant(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
