use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("parameter `{field}` of resonator {index} out of bounds: {value} not in [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("layout sampling exhausted after {attempts} rejections")]
    SamplingExhausted { attempts: usize },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Parse(e.to_string())
    }
}
