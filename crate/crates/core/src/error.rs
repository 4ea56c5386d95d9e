//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A box, grid or parameter failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A grid/tensor index was out of bounds.
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),

    /// Two tensors or grids that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Decoded head values produced a non-finite or non-positive box.
    #[error("decode produced an invalid box: {0}")]
    InvalidDecode(String),

    /// A file had the wrong magic, a truncated record or a bad field.
    #[error("malformed input in {path}: {reason}")]
    MalformedInput { path: String, reason: String },

    /// Scene synthesis could not satisfy its constraints.
    #[error("scene synthesis failed: {0}")]
    SynthFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn malformed(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Self {
        Error::MalformedInput {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
