//! End-to-end filter design: BRI initialization, multi-round PPO
//! optimization, artifact export, batch evaluation and the `dfcopt` CLI.

pub mod config;
pub mod pipeline;
pub mod svg;
pub mod task;

pub use config::PipelineConfig;
pub use pipeline::{batch_evaluate, design_end_to_end, BatchReport, BatchSummary, Outcome, RunLog, TaskRow};
pub use task::{bucket_counts, parse_bands, sample_tasks, BandwidthBucket, DesignTask};
