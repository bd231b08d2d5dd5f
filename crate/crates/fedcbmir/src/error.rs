use std::io;
use std::path::{Path, PathBuf};

use fedcbmir_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}, line {line}: {reason}")]
    Manifest { path: PathBuf, line: u64, reason: String },
    #[error("cannot load image {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("network error: {0}")]
    Network(String),
}

impl AppError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        AppError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 2 config, 3 protocol/round, 4 data, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Network(_) => 3,
            AppError::Io { .. } | AppError::Manifest { .. } | AppError::Image { .. } => 4,
            AppError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Contract(_) | CoreError::Dimension { .. } => 2,
                CoreError::Protocol(_) => 3,
                CoreError::Decode(_)
                | CoreError::Index(_)
                | CoreError::EmptyPartition(_)
                | CoreError::Evaluation(_) => 4,
                CoreError::Training(_) => 1,
            },
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl AsRef<Path>) -> Result<T> {
        self.map_err(|e| AppError::io(path, e))
    }
}
