use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every module of the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("validation error at {level} level: {message}")]
    Validation { level: &'static str, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("frame sink failed after {emitted} frames: {source}")]
    SinkAborted {
        emitted: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },

    #[error("benchmark error: {0}")]
    Bench(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
