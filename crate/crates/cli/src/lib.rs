//! IO, concrete backends and the `corefline` command line.

pub mod backend;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::CliError;
