use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown element id {id} in mask")]
    UnknownElement { id: u64 },
    #[error("parameter layout does not match document: {0}")]
    LayoutMismatch(String),
    #[error("non-finite value for parameter {index}")]
    NonFiniteValue { index: usize },
    #[error("canvas has zero area ({width}x{height})")]
    ZeroCanvas { width: u32, height: u32 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("crop rectangle does not intersect the source raster")]
    EmptyCrop,
    #[error("degenerate text direction: prompt and reference embed identically")]
    DegenerateTextDirection,
    #[error("degenerate perspective quad")]
    DegenerateQuad,
    #[error("non-finite gradient at parameter {index} (step {step})")]
    NonFiniteGradient { step: u64, index: usize },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("svg parse error at offset {offset}: {message}")]
    SvgParse { offset: usize, message: String },
    #[error("{path}: {message}")]
    FileAccess { path: PathBuf, message: String },
    #[error("{path}: unsupported image format: {detail}")]
    UnsupportedImage { path: PathBuf, detail: String },
    #[error("backend error: {0}")]
    Backend(String),
}

impl Error {
    /// True for failures of the embedding backend, as opposed to bad input.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_))
    }
}
