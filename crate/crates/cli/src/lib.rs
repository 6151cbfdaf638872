//! Command-line driver: configuration, file formats and the `rerank`,
//! `evaluate` and `sweep` commands.

pub mod commands;
pub mod config;
