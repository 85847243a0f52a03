use std::path::PathBuf;

use bsynth_core::prompt::BackendError;

/// Error category, which also fixes the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Backend,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Config => 2,
            Self::Data => 3,
            Self::Backend => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{path}: {count} invalid record(s):\n{details}")]
    InvalidRecords {
        path: PathBuf,
        count: usize,
        details: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] bsynth_core::Error),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

impl Error {
    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        use bsynth_core::Error as E;
        match self {
            Self::Config(_) => Category::Config,
            Self::Data { .. } | Self::InvalidRecords { .. } | Self::Io { .. } => Category::Data,
            // a missing key or endpoint is caught before any request is made
            Self::Backend(BackendError::Config { .. }) | Self::Core(E::Backend(BackendError::Config { .. })) => {
                Category::Config
            }
            Self::Backend(_) | Self::Core(E::Backend(_)) => Category::Backend,
            Self::Core(E::SimConfig(_) | E::Policy(_) | E::Split(_) | E::InvalidArgument(_)) => Category::Config,
            Self::Core(_) => Category::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
