//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible operand shapes, with the offending op named.
    #[error("shape mismatch in `{op}`: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    /// An op produced NaN or Inf from finite inputs.
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    /// A caller violated an API contract (bad argument, wrong state).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or truncated on-disk artifact.
    #[error("format error in {path}: {details}")]
    Format { path: String, details: String },

    /// Artifact bound to the wrong upstream input (seed or checksum mismatch).
    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
