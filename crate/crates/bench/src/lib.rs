//! Experiment orchestration for continual offline RL: config files,
//! per-seed runs with checkpoints, parameter sweeps and reports.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod run;

pub use config::{load_config, parse_config, save_config, ExperimentConfig, SweepGrid};
pub use error::BenchError;
