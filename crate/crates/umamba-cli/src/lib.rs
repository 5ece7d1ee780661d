//! Library half of the command-line binary: run configuration and command
//! implementations, kept importable so integration tests drive them directly.

pub mod commands;
pub mod config;
