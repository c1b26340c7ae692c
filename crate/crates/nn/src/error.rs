use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    Shape {
        op: &'static str,
        a: Vec<usize>,
        b: Vec<usize>,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err<T>(op: &'static str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(NnError::Shape {
        op,
        a: a.to_vec(),
        b: b.to_vec(),
    })
}
