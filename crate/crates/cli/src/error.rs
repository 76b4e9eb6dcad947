use std::fmt;

use hawkes_core::Error;

/// CLI failure, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid configuration, or an I/O failure (exit 1).
    Config(String),
    /// Numeric failure in a required computation (exit 2).
    Numeric(String),
    /// Monte Carlo validation did not pass (exit 3).
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BlowUp { .. }
            | Error::Overflow
            | Error::QuadratureFailure { .. }
            | Error::MajorantViolation { .. }
            | Error::ExplosionGuard { .. }
            | Error::StateMismatch { .. } => CliError::Numeric(e.to_string()),
            Error::ZeroVariance { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}
