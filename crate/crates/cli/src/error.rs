use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Schema(String),
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("numerical failure: {0}")]
    Numerical(cap_core::Error),
    #[error("{0}")]
    Input(cap_core::Error),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Parse { .. } | CliError::Input(_) => 3,
            CliError::Numerical(_) | CliError::Replay(_) => 4,
            CliError::Io { .. } => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Parse {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}

impl From<cap_core::Error> for CliError {
    fn from(e: cap_core::Error) -> Self {
        use cap_core::Error as E;
        match e {
            e if e.is_numerical() => CliError::Numerical(e),
            E::InvalidParameter { .. } => CliError::Schema(e.to_string()),
            e => CliError::Input(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
