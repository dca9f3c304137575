//! Library surface of the `linkeq` binary: config loading, command
//! implementations and manifest writing, separated so integration tests
//! can drive the pieces directly.

pub mod commands;
pub mod config;
pub mod manifest;

/// Error carrying the process exit class (1 usage/config, 2 runtime).
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub usage: bool,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            usage: true,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            usage: false,
        }
    }

    /// Configuration-phase library errors are usage errors.
    pub fn from_config_error(e: linkeq::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<linkeq::Error> for CliError {
    fn from(e: linkeq::Error) -> Self {
        // Errors raised while a command runs are runtime failures.
        Self::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}
