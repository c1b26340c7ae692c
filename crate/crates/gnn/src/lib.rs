//! Graph attention surrogate for the transmission response of a resonator
//! layout, with dataset generation and supervised training.

pub mod dataset;
pub mod error;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod train;

pub use dataset::{generate_dataset, Dataset, Sample};
pub use error::{GnnError, Result};
pub use graph::{layout_to_graph, CircuitGraph};
pub use model::{GatConfig, GatSurrogate};
pub use oracle::GnnOracle;
pub use train::{train_surrogate, SurrogateTrainConfig, TrainReport};
