use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the classification engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two arrays disagree along a named axis.
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    /// A network configuration whose layer shapes do not fit together.
    #[error("infeasible geometry in {branch}: {reason}")]
    Geometry { branch: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("non-finite training loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("dataset: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            axis,
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn geometry(branch: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Geometry {
            branch: branch.into(),
            reason: reason.into(),
        }
    }
}
