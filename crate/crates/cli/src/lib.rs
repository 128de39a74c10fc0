//! Experiment driver for `specrf`: subcommands, configs, artifacts and exit
//! codes.

pub mod config;
pub mod experiments;
pub mod run;

pub use config::{Preset, RunConfig};
pub use run::{exit_code, run_experiment, write_outputs, RunOutput};
