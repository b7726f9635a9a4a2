use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::MissingInput { .. } | CliError::Leakage(_) | CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn is_leakage(&self) -> bool {
        matches!(self, CliError::Leakage(_))
    }

    pub(crate) fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }

    pub(crate) fn write(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Internal(format!("writing {}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
