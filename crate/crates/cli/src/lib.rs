//! Library side of the `pscore` command line tool: run configuration, the
//! subcommands, and the artifacts they write.

pub mod artifact;
pub mod commands;
pub mod config;
mod error;

pub use commands::{cmd_bench, cmd_perturb, cmd_score, cmd_synth, cmd_train};
pub use config::RunConfig;
pub use error::{CliError, Result};
