use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SrhError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SrhError {
    #[error("format error: {0}")]
    Format(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate norm: {norm:e} is below {eps:e}")]
    DegenerateNorm { norm: f64, eps: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("state error: {0}")]
    State(String),

    #[error("patient leakage: {0}")]
    Leakage(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl SrhError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SrhError::Io {
            path: path.into(),
            source,
        }
    }
}
