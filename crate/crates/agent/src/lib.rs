//! PPO actor-critic over the layout-editing environment and the multi-round
//! optimization loop that chains rounds from the best layout found so far.

pub mod buffer;
pub mod error;
pub mod nets;
pub mod ppo;
pub mod rldfcdo;

pub use buffer::{compute_gae, RolloutBuffer};
pub use error::{AgentError, Result};
pub use nets::{ActMode, ActOutput, ActorCritic};
pub use ppo::{ppo_update, PpoConfig, UpdateStats};
pub use rldfcdo::{curves_to_csv, train_rldfcdo, CurveRow, RldfcdoConfig, RldfcdoResult, RoundRecord};
