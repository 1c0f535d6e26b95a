use std::path::PathBuf;

use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Speed bracket, normalization threshold or window guard.
    #[error("{0}")]
    Guard(String),

    #[error("{0}")]
    Eigen(String),

    #[error("verification failed: {}", .0.join(", "))]
    Verify(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Guard(_) => 2,
            CliError::Eigen(_) => 3,
            CliError::Verify(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Io { .. } => 6,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<toadwave_core::Error> for CliError {
    fn from(e: toadwave_core::Error) -> Self {
        use toadwave_core::Error as E;
        match e {
            E::Domain(_) => CliError::Config(e.to_string()),
            E::Bracket(_) | E::EpsilonAboveThreshold { .. } | E::WindowOverflow { .. } => {
                CliError::Guard(e.to_string())
            }
            E::EigenNotConverged { .. } => CliError::Eigen(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
