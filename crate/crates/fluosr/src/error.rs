use std::io;
use std::path::{Path, PathBuf};

/// Everything the command-line tools can fail with.
#[derive(Debug, thiserror::Error)]
pub enum FluoError {
    /// Bad flags or configuration, detected before any compute.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    /// Unreadable, inconsistent or missing data.
    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] fluosr_core::Error),
}

pub type Result<T, E = FluoError> = std::result::Result<T, E>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

impl FluoError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        FluoError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            FluoError::Usage(_) => EXIT_USAGE,
            FluoError::Io { .. } | FluoError::Data(_) => EXIT_DATA,
            FluoError::Core(fluosr_core::Error::NonFinite(_)) => EXIT_NUMERIC,
            FluoError::Core(_) => EXIT_DATA,
        }
    }
}

macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::FluoError::Data(format!($($arg)*)) };
}

macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::FluoError::Usage(format!($($arg)*)) };
}

pub(crate) use data_err;
pub(crate) use usage_err;
