use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding set is empty")]
    EmptySet,

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("unknown query {0:?}")]
    UnknownQuery(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("no candidates for {0:?}")]
    NoCandidates(String),

    #[error("bad magic in performance matrix file")]
    BadMagic,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("sidecar mismatch: {0}")]
    SidecarMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("row {0:?} has no candidates after self-exclusion")]
    EmptyRow(String),

    #[error("no mined sets for {0:?}")]
    MissingSets(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Runtime failures (I/O, divergence) as opposed to rejected input.
    pub fn is_runtime(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}
