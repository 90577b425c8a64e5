//! Experiment harness: TOML configs in, CSV reports out.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::Config;
pub use experiments::{
    analyze, describe_experiment, experiment_names, run_experiment, ExperimentOutcome,
    EXPERIMENTS,
};
pub use report::{Report, Row};
