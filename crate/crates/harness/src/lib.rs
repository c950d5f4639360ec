//! Experiment orchestration: configuration, sweeps and result files.

pub mod config;
pub mod output;
pub mod sweep;
