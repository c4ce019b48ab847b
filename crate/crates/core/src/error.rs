use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("key must be 64 hex characters, got {len}")]
    KeyLength { len: usize },

    #[error("invalid hex digit {found:?} at position {position}")]
    KeyHex { position: usize, found: char },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("plain sample {index} has value {value}, expected a finite value in [0, 1]")]
    InputRange { index: usize, value: f32 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("unsupported image format in {path}: {format}")]
    UnsupportedImage { path: PathBuf, format: String },

    #[error("tensor file: {reason} (at byte offset {offset})")]
    TensorFormat { offset: usize, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("probe: {0}")]
    Probe(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("os entropy unavailable: {0}")]
    Entropy(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
