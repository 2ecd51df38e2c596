//! Command-line driver: reads an experiment config, runs one command and
//! writes CSV (and for decay reports, SVG) artifacts.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_with, Command, ExperimentConfig, Overrides};
pub use error::CliError;
pub use run::{run, RunSummary};
