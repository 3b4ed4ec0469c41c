//! Process-level error type with a stable exit-code mapping.

use std::path::{Path, PathBuf};

use hamlearn_core::CoreError;
use hamlearn_learners::LearnError;
use thiserror::Error;

/// Everything the binary can fail with. Exit codes are part of the CLI
/// contract so scripts can distinguish bad invocations (2) from training
/// that aborted on a non-finite loss (3) and filesystem trouble (4).
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad command line or config file; the message names the field.
    #[error("{0}")]
    Usage(String),
    /// Filesystem failure, tagged with the path involved.
    #[error("{source}: {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Learn(LearnError::NonFiniteLoss { .. }) => 3,
            CliError::Io { .. } => 4,
            CliError::Learn(_) | CliError::Core(_) => 1,
        }
    }
}
