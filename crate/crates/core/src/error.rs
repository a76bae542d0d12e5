use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GrnError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("value outside domain: {0}")]
    Domain(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GrnError>;

impl GrnError {
    pub fn param(msg: impl Into<String>) -> Self {
        GrnError::Parameter(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        GrnError::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        GrnError::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        GrnError::Config(msg.into())
    }

    pub fn format(offset: usize, msg: impl Into<String>) -> Self {
        GrnError::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        GrnError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
