//! Scenario-driven front end for `heatflow-core`: JSON scenarios in,
//! deterministic CSV/JSON artifacts out.

pub mod commands;
pub mod error;
pub mod runner;
pub mod scenario;

pub use error::CliError;
pub use runner::{run_scenario, Check, RunOutcome};
pub use scenario::{parse_config, parse_str, Scenario};
