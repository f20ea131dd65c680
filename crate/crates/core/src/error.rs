//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the porosity-prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate, index, or layer fell outside its valid range.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// An argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A voxel CSV file failed to parse. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Translation registration could not produce a result.
    #[error("registration failed: {0}")]
    Registration(String),

    /// Model training failed.
    #[error("training failed: {0}")]
    Training(String),

    /// Synthetic dataset generation failed.
    #[error("generation failed: {0}")]
    Generation(String),

    /// Model or report (de)serialization failed.
    #[error("serialization failed: {0}")]
    Serialization(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
