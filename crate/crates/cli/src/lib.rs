//! Pipeline driver: each subcommand reads a [`RunConfig`], consumes the
//! artifacts of the previous stages from the output directory and writes its
//! own there.

pub mod commands;
pub mod config;

pub use config::{Overrides, RunConfig};

use fairwash::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_)
            | Error::MagicMismatch { .. }
            | Error::Truncated(_)
            | Error::CountMismatch { .. }
            | Error::CorruptHeader(_)
            | Error::EmptyDataset
            | Error::LabelOutOfRange { .. }
            | Error::ZeroVariance
            | Error::AlreadyNormalized
            | Error::ConstraintViolated { .. } => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
