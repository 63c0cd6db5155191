use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A tensor violates one of its declared invariants.
    #[error("level {level} {tensor}: {detail}")]
    Invariant {
        level: usize,
        tensor: &'static str,
        detail: String,
    },

    #[error("container {path}: {detail}")]
    Container { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("graph has {n} vertices, exceeding the enumeration cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    /// Violated internal precondition (e.g. contracting a missing edge).
    #[error("logic error: {0}")]
    Logic(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
