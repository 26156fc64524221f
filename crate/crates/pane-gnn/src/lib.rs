//! File formats, run configuration and the subcommand pipeline around
//! `pane_gnn_core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod ratings;

pub use config::RunConfig;
pub use error::{CliError, Result};
