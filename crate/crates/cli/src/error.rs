//! CLI error type with distinct exit codes per failure class.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("metric failure: {0}")]
    Metric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Metric(_) => 5,
        }
    }
}

/// Classifies core errors raised while loading or validating input files.
pub fn load_err(e: geomoe::Error) -> CliError {
    match e {
        geomoe::Error::Io(io) => CliError::Io(io.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

/// Classifies core errors raised while computing metrics or gradients.
pub fn metric_err(e: geomoe::Error) -> CliError {
    match e {
        geomoe::Error::Io(io) => CliError::Io(io.to_string()),
        other => CliError::Metric(other.to_string()),
    }
}

pub fn io_err(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}
