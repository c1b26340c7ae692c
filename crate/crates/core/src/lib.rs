//! Layout model, analytic transmission oracle, passband metrics and the
//! layout-editing environment for coupled-resonator filter design.

pub mod circuit;
pub mod env;
pub mod error;
pub mod metrics;
pub mod surrogate;

pub use circuit::{Layout, ParamBounds, Resonator, TemplateSpec};
pub use env::{EnvConfig, FilterEnv, InitialState};
pub use error::{CoreError, Result};
pub use metrics::{Band, PassbandSpec, RewardBreakdown, RewardConfig};
pub use surrogate::{AnalyticOracle, FrequencyGrid, Oracle, SParams, SurrogateConfig};
