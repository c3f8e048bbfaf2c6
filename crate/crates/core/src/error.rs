//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor construction, file I/O, filtering and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("zero dimension: {0}")]
    ZeroDimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("void label not allowed here: {0}")]
    VoidLabel(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
