//! Experiment runner behind the `lightnet` binary.

pub mod app;
pub mod config;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{ExperimentConfig, ExperimentKind};
