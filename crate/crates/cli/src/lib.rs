//! Command-line driver: data generation, training, evaluation, sweeps and
//! similarity inspection on the synthetic benchmark.

pub mod commands;
pub mod config;

pub use config::RunConfig;
