//! Command-line driver: configuration, pipeline stages and subcommands.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;
