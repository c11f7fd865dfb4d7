//! Experiment runner behind the `s3` binary: config parsing, mode dispatch
//! and CSV/JSON output.

pub mod config;
pub mod emit;
pub mod experiment;

use s3_core::S3Error;
use thiserror::Error;

pub use config::{
    parse_config_file, parse_config_str, ConfigError, ExperimentConfig, Format, Mode, ScalingAxis,
};
pub use emit::{emit, Header};
pub use experiment::{run_experiment, Cell, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(S3Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(field: &str, msg: impl Into<String>) -> Self {
        CliError::Config(ConfigError::Field {
            field: field.to_string(),
            msg: msg.into(),
        })
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<S3Error> for CliError {
    fn from(e: S3Error) -> Self {
        match e {
            S3Error::Config(msg) => CliError::Config(ConfigError::Field {
                field: "config".into(),
                msg,
            }),
            other => CliError::Numerical(other),
        }
    }
}
