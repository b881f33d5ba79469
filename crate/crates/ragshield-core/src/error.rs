//! Shared error type for the toolkit.

use thiserror::Error;

/// Errors produced across the retrieval, attack and evaluation pipelines.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (bad parameter, mismatched dimension, ...).
    #[error("usage: {0}")]
    Usage(String),

    /// A remote service returned malformed data; `index` names the offending input.
    #[error("data error at input index {index}: {message}")]
    Data { index: usize, message: String },

    /// Transport-level failure that persisted through the retry budget.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Retriable { attempts: u32, message: String },

    /// Persisted index is corrupt, truncated or has the wrong magic.
    #[error("index format: {0}")]
    Format(String),

    /// A data file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Index construction rejected its inputs (duplicate key, dimension mix).
    #[error("index build: {0}")]
    Build(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn build(msg: impl Into<String>) -> Self {
        Error::Build(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
