//! Command-line front end for the federated distillation simulator.
//!
//! The binary is a thin shell over this library so integration tests can
//! drive the same code paths in process.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_run, cmd_sweep, cmd_validate, CmdFailure};
pub use config::{effective_config_lines, parse_config_file, parse_config_str};
