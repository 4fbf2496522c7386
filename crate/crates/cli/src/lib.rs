//! Command line front end and HTTP session service for the persona
//! discovery engine.
//!
//! The `discover` binary is a thin wrapper around [`run`]; tests call it
//! in-process.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use commands::run;
pub use error::{CliError, CliResult};
