//! The `mosaic` harness: configuration, artifact writing and subcommands.

pub mod artifacts;
pub mod commands;
pub mod config;

pub use config::{ConfigError, ExperimentConfig, TrainMethod};
