use std::path::{Path, PathBuf};

use relpose_core::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_OTHER: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents could not be decoded.
    #[error("{}: {message}", .path.display())]
    Decode { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn decode(path: impl AsRef<Path>, message: impl ToString) -> Self {
        CliError::Decode {
            path: path.as_ref().to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Decode { .. } => EXIT_IO,
            CliError::Core(e) => match e.root() {
                CoreError::Configuration(_) => EXIT_USAGE,
                CoreError::Io(_) | CoreError::Format { .. } => EXIT_IO,
                CoreError::DegenerateScene(_)
                | CoreError::EmptyMask
                | CoreError::EmptyMesh(_)
                | CoreError::DegenerateFeatures { .. } => EXIT_DEGENERATE,
                _ => EXIT_OTHER,
            },
        }
    }
}
