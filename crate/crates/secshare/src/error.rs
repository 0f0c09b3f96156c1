use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] secshare_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
    #[error("configuration hash mismatch: ours {ours}, peer {theirs}")]
    ConfigMismatch { ours: String, theirs: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        AppError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, detail: impl Into<String>) -> Self {
        AppError::Format { path: path.as_ref().to_path_buf(), detail: detail.into() }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        use secshare_core::Error as E;
        match self {
            AppError::Core(E::Protocol(_)) => 3,
            AppError::Core(E::Underrun { .. }) => 4,
            AppError::Core(E::Transport(_)) | AppError::Io { .. } | AppError::Format { .. } => 5,
            AppError::ConfigMismatch { .. } => 6,
            _ => 1,
        }
    }
}
