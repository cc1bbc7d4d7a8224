use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LoatError>;

#[derive(Debug, Error)]
pub enum LoatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("shape mismatch: expected {expected:?}, found {found:?} ({context})")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
        context: String,
    },

    #[error("duplicate category `{0}`")]
    DuplicateCategory(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unsatisfiable scene config: {0}")]
    Unsatisfiable(String),
}

impl LoatError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LoatError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        LoatError::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LoatError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input (exit code 2 at the CLI).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            LoatError::Config { .. }
                | LoatError::InvalidArgument(_)
                | LoatError::Malformed { .. }
                | LoatError::Io { .. }
                | LoatError::DuplicateCategory(_)
        )
    }
}
