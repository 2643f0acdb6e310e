use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] dbp_autodiff::Error),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("split failed: {0}")]
    Split(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint incompatible with request; differing fields: {}", .0.join(", "))]
    Compat(Vec<String>),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
