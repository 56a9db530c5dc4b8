use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("prerequisite error: {0}")]
    Prerequisite(String),

    #[error("divergence at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Core(#[from] ewc_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {path}: {message}")]
    Record { path: PathBuf, message: String },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 prerequisite, 4 divergence, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Core(ewc_core::Error::Config(_)) => 2,
            HarnessError::Prerequisite(_) => 3,
            HarnessError::Core(ewc_core::Error::Prerequisite(_)) => 3,
            HarnessError::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
