//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or precondition violation. Maps to exit code 1.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("no semantic embedding for class {class}")]
    Semantic { class: usize },

    #[error("training error ({context}): {msg}")]
    Training { context: String, msg: String },

    #[error("aggregation error: client {client} has an incompatible parameter layout")]
    Aggregation { client: usize },

    #[error("report error: {0}")]
    Schema(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn training(context: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Training {
            context: context.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    ///
    /// The CLI exits with code 1 for these and 2 for everything else.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Dimension { .. }
        )
    }
}
