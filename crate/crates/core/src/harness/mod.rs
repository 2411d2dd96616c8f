//! Experiment front-end: data, synthetic tasks, metrics, configs and runs.

pub mod config;
pub mod data;
pub mod experiment;
pub mod generate;
pub mod metrics;
