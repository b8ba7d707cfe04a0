use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] mood_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 4 for numeric failures, 3 for anything
    /// wrong with input or output data.
    pub fn exit_code(&self) -> ExitCode {
        use mood_core::Error as E;
        let code = match self {
            CliError::Config { .. } | CliError::Core(E::Config { .. }) => 2,
            CliError::Core(E::Poisoned { .. }) => 4,
            _ => 3,
        };
        ExitCode::from(code)
    }
}
