//! Small reverse-mode autodiff engine over dense `f64` tensors with a dense
//! layer, Adam and JSON checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{NnError, Result};
pub use params::{Linear, ParamId, ParamStore};
pub use tape::{attention_weights, Gradients, Tape, Var};
pub use tensor::Tensor;
