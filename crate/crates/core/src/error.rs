use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: u64, found: u64 },

    #[error("non-finite value at row {row}, col {col}, band {band}")]
    NonFinite { row: usize, col: usize, band: usize },

    #[error("feature {feature}: {message}")]
    Polygon { feature: usize, message: String },

    #[error("control points: {0}")]
    ControlPoints(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("index undefined: {0}")]
    UndefinedIndex(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerically degenerate data rather than
    /// malformed inputs (singular fits, undefined validity indices).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Degenerate(_) | Error::UndefinedIndex(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
