use std::path::PathBuf;

/// Errors produced by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid shape {0:?}: extents must be >= 1 and rank >= 1")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("filter set `{set}` failed {check} (residual {residual:e})")]
    Validation {
        set: String,
        check: String,
        residual: f64,
    },

    #[error("degenerate filter: {0}")]
    DegenerateFilter(String),

    #[error("signal too small: {height}x{width} cannot support {levels} levels")]
    SignalTooSmall {
        height: usize,
        width: usize,
        levels: usize,
    },

    #[error("token mixing needs square spatial extents, got {height}x{width}")]
    NonSquareSpatial { height: usize, width: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
