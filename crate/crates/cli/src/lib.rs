//! Experiment harness for the pipelined ADC calibration model: configuration,
//! the `convergence`, `inl`, `bound` and `twophase` commands, and CSV output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use experiments::{execute, Command};
