//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by dataset generation, training, reconstruction and I/O.
#[derive(Debug, Error)]
pub enum SvrError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("all slices excluded: {0}")]
    AllSlicesExcluded(String),

    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SvrError>;
