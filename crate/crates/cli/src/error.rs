//! Error classes and their process exit codes.

use std::fmt::Display;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or metric names.
    #[error("usage error: {0}")]
    Usage(String),
    /// Unreadable or malformed inputs, unwritable outputs.
    #[error("data error: {0}")]
    Data(String),
    /// Failures while training or running agents.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

pub fn usage(e: impl Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;
