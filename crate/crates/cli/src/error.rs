use std::fmt::Display;
use std::path::Path;

/// Failures split by exit code: bad invocations (1) versus inputs that could
/// not be read or processed (2).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub fn usage(msg: impl Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn data(msg: impl Display) -> Self {
        CliError::Data(msg.to_string())
    }

    /// A data error that names the file it came from.
    pub fn at(path: &Path, msg: impl Display) -> Self {
        CliError::Data(format!("{}: {msg}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
