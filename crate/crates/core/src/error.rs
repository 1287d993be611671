use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the benchmark core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot segment: window {window} exceeds signal length {len}")]
    Segmentation { window: usize, len: usize },

    #[error("cannot split: {0}")]
    Split(String),

    #[error("shape mismatch in {path}: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },

    #[error("label {label} out of range for {num_classes} classes in {path}")]
    UnknownClass {
        path: PathBuf,
        label: i64,
        num_classes: usize,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("malformed {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("model selection failed: {0}")]
    Selection(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
