use std::io;
use std::path::{Path, PathBuf};

/// Everything a command can fail with.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] eend_core::Error),
    #[error("unmatched recording ids: {}", .0.join(", "))]
    Unmatched(Vec<String>),
}

impl CliError {
    /// 0 is success, 1 a runtime failure, 2 a usage or configuration error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.as_ref().to_path_buf();
        move |source| CliError::Io { path, source }
    }

    pub fn format(path: impl AsRef<Path>, detail: impl std::fmt::Display) -> CliError {
        CliError::Format {
            path: path.as_ref().to_path_buf(),
            detail: detail.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
