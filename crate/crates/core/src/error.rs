//! Error taxonomy shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A scalar argument violates its precondition (non-positive time
    /// constant, pixel outside [0,1], ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vector/matrix dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced or received non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input data is structurally valid but semantically wrong
    /// (out-of-range unit index, count mismatch, empty dataset, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A file does not follow its declared byte layout.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// An operation was invoked on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// Experiment configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Shape(_) | Error::State(_) => 2,
        }
    }
}
