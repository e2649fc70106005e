//! File formats, configuration, Monte Carlo runner and subcommands behind the `afm` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod mc;

pub use commands::{run, Command, Outcome};
pub use config::RunConfig;
pub use error::{CliError, Result};
