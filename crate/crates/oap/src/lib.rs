//! Command-line harness around `oap-core`: config files, text formats, run
//! directories and the five subcommands.

pub mod cli;
pub mod config;
pub mod formats;
pub mod run;

/// Errors surfaced to the command line. The variant decides the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    /// Unreadable or malformed input file.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<oap_core::Error> for CliError {
    fn from(e: oap_core::Error) -> Self {
        match e {
            oap_core::Error::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
