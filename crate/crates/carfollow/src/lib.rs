//! File formats, dataset adapters, configuration and subcommands built on
//! `carfollow-core`.

pub mod adapters;
pub mod canonical;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, Result};
