use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose dimensions do not fit together.
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Persisted file that does not match its sidecar or manifest.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("symmetric eigen-solver failed to converge (condition estimate {condition_estimate:e})")]
    EigenFailure { condition_estimate: f64 },

    #[error("activation `{0}` has no closed-form Gaussian kernel; use the Monte-Carlo oracle")]
    UnsupportedActivation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
