use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Core(#[from] dfc_core::CoreError),
    #[error(transparent)]
    Nn(#[from] dfc_nn::NnError),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, AgentError>;
