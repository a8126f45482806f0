//! Configuration, synthetic data, statistics and report emission behind the CLI.

pub mod cache;
pub mod commands;
pub mod config;
pub mod report;
pub mod stats;
pub mod synthetic;

pub use commands::{cmd_ingest, cmd_report, cmd_spectral_stats, cmd_train, TrainOutput};
pub use config::{ClientSpec, DataSource, ExperimentConfig};
