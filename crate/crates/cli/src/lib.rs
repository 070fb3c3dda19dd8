//! Command-line front end: configuration loading and the `synth`, `train`,
//! `clean`, `eval` and `latent` commands.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_clean, cmd_eval, cmd_latent, cmd_synth, cmd_train};
pub use config::CliConfig;
pub use error::{CliError, CliResult};
