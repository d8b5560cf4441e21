use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid construction parameters (grid sizes, config values, unknown keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller passed arguments that violate an operation's preconditions.
    #[error("argument error: {0}")]
    Argument(String),

    /// Two tensors with incompatible shapes met in one operation.
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A rotated grid did not map onto itself.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// The requested combination is not defined (e.g. a symmetry group on an ERP grid).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ingestion error in {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("training error in parameter `{param}`: {reason}")]
    Training { param: String, reason: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Argument(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
