//! Command-line front end: scenario loading, subcommands and output writers.

pub mod bundle;
pub mod commands;
pub mod error;
pub mod svg;

pub use bundle::{Format, ResultBundle};
pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
