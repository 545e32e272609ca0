//! Experiment orchestration for the dfrc workspace: config ingestion, seeded
//! runs, sweep execution, and persistent CSV outputs.

pub mod channel;
pub mod config;
pub mod run;

pub use channel::{load_channel_file, synthesize_channel};
pub use config::{load_config, ExperimentConfig, Scheme};
pub use run::{run_experiment, RunError, RunSummary};
