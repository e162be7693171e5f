use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("duplicate passage id `{0}`")]
    DuplicateId(String),
    #[error("unknown passage id `{0}`")]
    UnknownId(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("empty collection")]
    EmptyCollection,
    #[error("text has no indexable content")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid rank {0}: ranks start at 1")]
    InvalidRank(i64),
    #[error("token budget {budget} cannot hold current query of {needed} tokens")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },
    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("annotator request failed: {0}")]
    Annotator(String),
    #[error("missing dependency `{artifact}`; run `{producer}` first")]
    MissingDependency {
        artifact: String,
        producer: &'static str,
    },
    #[error("{0} already exists; pass --force to overwrite")]
    AlreadyExists(PathBuf),
    #[error("workdir is locked by another command ({0})")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user input or configuration rather than a bug.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFiniteLoss { .. } | Error::Shape { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
