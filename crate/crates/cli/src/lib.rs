//! Library half of the `fedsim` command-line tool: config loading, CSV and
//! manifest output, and the subcommand implementations. `main.rs` only parses
//! arguments and maps errors to exit codes.

pub mod commands;
pub mod config;
pub mod format;
pub mod manifest;
pub mod table;

use std::path::PathBuf;

use fedsim_core::FedError;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for runtime failures other than divergence (I/O, round errors).
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for configuration and usage errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status when local training diverged.
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] FedError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Core(e) if e.is_divergence() => EXIT_DIVERGENCE,
            Self::Core(FedError::Config(_) | FedError::Usage(_) | FedError::Layout(_)) => EXIT_USAGE,
            Self::Core(_) | Self::Io { .. } => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
