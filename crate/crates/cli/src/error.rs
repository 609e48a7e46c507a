use std::path::PathBuf;

use thiserror::Error;

/// CLI failures carrying their process exit code:
/// 2 configuration, 3 data, 4 numerical, 1 anything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error in {path}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Data { path: PathBuf, line: Option<u64>, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, line: Option<u64>, msg: impl Into<String>) -> Self {
        CliError::Data { path: path.into(), line, message: msg.into() }
    }
}

/// Engine errors raised while executing a command: invalid inputs trace back
/// to the configuration (exit 2), numerical breakdowns are exit 4.
pub fn from_engine(err: zfepr_core::Error) -> CliError {
    match err {
        zfepr_core::Error::Invalid(msg) => CliError::Config(msg),
        zfepr_core::Error::Numerical(msg) => CliError::Numerical(msg),
    }
}
