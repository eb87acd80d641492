//! Config parsing, experiment runners and artifact writers behind `simulate`.

pub mod config;
pub mod run;
pub mod svg;

pub use config::{ConfigError, Experiment, Scenario};
pub use run::{fig_suite, replay, run, RunError, Summary};
