use thiserror::Error;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Core(#[from] dfc_core::CoreError),
    #[error(transparent)]
    Nn(#[from] dfc_nn::NnError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, GnnError>;
