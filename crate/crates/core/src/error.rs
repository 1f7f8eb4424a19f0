//! Error type shared by all core operations.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by image I/O, synthesis, and solver operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode error on {path}: {message}")]
    PngDecode { path: PathBuf, message: String },
    #[error("png encode error on {path}: {message}")]
    PngEncode { path: PathBuf, message: String },
    #[error("unsupported image format for {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("corrupt raw field file {path}: {detail}")]
    CorruptField { path: PathBuf, detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("transmission {value} below floor {floor} at pixel ({x}, {y})")]
    TransmissionFloor {
        value: f32,
        floor: f32,
        x: usize,
        y: usize,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("manifest references missing files:\n{}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))]
    MissingFiles(Vec<PathBuf>),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dims(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
