use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FcanError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("loss became non-finite at iteration {iter} (lr = {lr:e})")]
    NonFiniteLoss { iter: usize, lr: f64 },
}

pub type Result<T> = std::result::Result<T, FcanError>;

impl FcanError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        FcanError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        FcanError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcanError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        FcanError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
