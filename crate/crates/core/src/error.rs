use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("tensor {path}: {message}")]
    Tensor { path: PathBuf, message: String },

    #[error("{path}: expected shape {expected:?}, found {found}")]
    ShapeMismatch {
        path: PathBuf,
        expected: [usize; 3],
        found: String,
    },

    #[error("non-finite value at flat index {index} in {path}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient records: need {needed}, have {available}")]
    InsufficientRecords { needed: usize, available: usize },

    #[error("feature layout mismatch: model expects {expected}, got {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}
