use std::path::PathBuf;

/// Errors raised across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid depth {value} at pixel {index}")]
    InvalidDepth { index: usize, value: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("failed to load {}: {reason}", path.display())]
    Load { path: PathBuf, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("misaligned clouds: {0}")]
    Alignment(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Load { path: path.into(), reason: reason.to_string() }
    }
}
