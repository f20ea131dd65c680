//! CLI failure classes. Each maps to a distinct process exit code so
//! scripts can tell a bad invocation from bad data from a mid-run failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The invocation itself is wrong: unknown flags, invalid config.
    #[error("{0}")]
    Usage(String),
    /// An input file is missing or malformed.
    #[error("{0}")]
    Data(String),
    /// A pipeline stage failed after inputs were accepted.
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Pipeline(_) => 4,
        }
    }
}
