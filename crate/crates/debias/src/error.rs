use std::path::PathBuf;

use debias_core::data::DataError;
use debias_core::moo::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{failed} of {total} seeds failed; partial results in {dir}")]
    SeedsFailed { failed: usize, total: usize, dir: PathBuf },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Process exit code: 1 usage, 2 divergence, 3 io.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json { .. } | Error::Csv(_) | Error::Format { .. } | Error::Exists(_) => 3,
            Error::Train(TrainError::Diverged(_) | TrainError::NonFiniteGradient { .. }) | Error::SeedsFailed { .. } => 2,
            Error::Config(_) | Error::Train(_) | Error::Data(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
