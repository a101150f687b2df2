//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(String),

    #[error("no facts could be extracted from the explored documents")]
    EmptyEvidence,

    #[error("planner produced an empty plan for query: {0}")]
    DegeneratePlan(String),

    #[error("malformed record at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("missing ids in results file: {}", .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }
}
