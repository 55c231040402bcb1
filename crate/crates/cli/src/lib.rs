//! Orchestrator for the evchain pipeline: config loading, stage execution and
//! the `evchain` command line.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod record;

pub use commands::run;
