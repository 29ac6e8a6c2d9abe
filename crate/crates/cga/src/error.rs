use aforge_core::CoreError;
use aforge_neural::NeuralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CgaError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl From<CgaError> for CoreError {
    fn from(e: CgaError) -> Self {
        match e {
            CgaError::Core(c) => c,
            other => CoreError::Model(Box::new(other)),
        }
    }
}

pub type Result<T, E = CgaError> = std::result::Result<T, E>;
