//! Experiment configuration, training runs and artifact generation for the
//! tKRnet benchmarks.

pub mod config;
pub mod report;
pub mod run;

pub use config::{preset, ExperimentConfig, PRESETS};
