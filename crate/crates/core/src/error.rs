use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot sample from an empty distribution")]
    EmptyDistribution,

    #[error("numeric failure at step {step}: {what}")]
    Poisoned { step: u64, what: String },

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("dataset file: {0}")]
    Parse(#[from] ParseError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a `MOODDS01` dataset file. Each variant names the
/// section of the file where decoding stopped.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("bad magic bytes (expected MOODDS01)")]
    BadMagic,

    #[error("file truncated in section `{section}`")]
    Truncated { section: &'static str },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("dimension mismatch in section `{section}`: {detail}")]
    Dimension {
        section: &'static str,
        detail: String,
    },
}
