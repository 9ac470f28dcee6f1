//! `droprate`: train, compare, sample, benchmark and plot dropout-schedule runs.

pub mod app;
pub mod commands;
pub mod config;
pub mod plot;
pub mod report;

use std::fmt;

use droprate_core::Error;

/// Command failure, split by exit status: 1 for usage and configuration
/// problems, 2 for failures while running.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidInput(_)
            | Error::InvalidRate(_)
            | Error::OutOfRange { .. }
            | Error::ContextOverflow { .. }
            | Error::Vocabulary { .. }
            | Error::DegenerateVocabulary(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
