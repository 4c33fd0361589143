use std::io;

use thiserror::Error;

pub type Result<T, E = GcmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GcmError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("negative sampling failed: {0}")]
    Sampling(String),

    #[error("graph construction error: {0}")]
    Construction(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("run id mismatch: {expected} vs {found} ({what})")]
    RunIdMismatch {
        expected: String,
        found: String,
        what: String,
    },

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GcmError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        GcmError::Param(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        GcmError::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        GcmError::Format(msg.into())
    }
}
