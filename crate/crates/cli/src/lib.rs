//! The `refmix` command line: attention property checks, encoding
//! inspection, the synthetic-data pipeline, the benchmark harness and toy
//! model training and sampling.

pub mod app;
pub mod checks;
pub mod commands;
pub mod config;
pub mod error;

pub use app::run;
pub use config::{CliConfig, ConfigErrors};
pub use error::{CliError, EXIT_BACKEND, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
