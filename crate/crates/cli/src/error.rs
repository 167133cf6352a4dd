//! Error categories mapped to stable exit codes.
//!
//! Every failure surfaces as one line on stderr, `error[<category>]: <msg>`,
//! so scripts can branch on the category without parsing prose. Exit codes:
//! 2 config, 3 io, 4 numerical.

use std::fmt;
use std::path::Path;

use stablemind_core::Error as CoreError;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or command-line input.
    Config(String),
    /// A file or directory could not be read, written, or understood.
    Io(String),
    /// Training, evaluation, or validation hit a numeric failure.
    Numerical(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    /// An io-category error that names the offending path.
    pub fn io_at(path: &Path, err: impl fmt::Display) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn config_at(path: &Path, err: impl fmt::Display) -> CliError {
        CliError::Config(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            // Precondition violations trace back to configuration or inputs.
            CoreError::InvalidArgument(_) => CliError::Config(err.to_string()),
            _ => CliError::Numerical(err.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
