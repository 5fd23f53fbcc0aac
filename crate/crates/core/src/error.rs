use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller broke an operation precondition (mismatched extents, empty sets, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parameter `{name}` = {value} outside {range}")]
    ParamRange {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported or malformed file: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("unknown discriminator layer `{0}`")]
    Registry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn range(name: &'static str, value: f64, range: impl Into<String>) -> Self {
        Error::ParamRange {
            name,
            value,
            range: range.into(),
        }
    }
}
