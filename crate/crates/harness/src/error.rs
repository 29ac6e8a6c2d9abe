use std::path::PathBuf;

use aforge_cga::CgaError;
use aforge_core::CoreError;
use aforge_neural::NeuralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint {path}; run `aforge train {stage}` first")]
    MissingCheckpoint { path: PathBuf, stage: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Cga(#[from] CgaError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for bad configuration, 3 when a cap or an
    /// external resource (file, checkpoint) stops the run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(CoreError::InvalidConfig(_) | CoreError::InvalidDistribution(_)) => 2,
            HarnessError::Cga(CgaError::InvalidConfig(_)) => 2,
            HarnessError::MissingCheckpoint { .. } | HarnessError::Io { .. } => 3,
            HarnessError::Core(CoreError::EnumerationCap { .. } | CoreError::Io(_)) => 3,
            HarnessError::Cga(CgaError::Core(CoreError::EnumerationCap { .. })) => 3,
            HarnessError::Neural(NeuralError::Io(_)) => 3,
            _ => 1,
        }
    }
}
