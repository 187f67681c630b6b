//! Configuration, scenario library, batch execution and artifact output.

pub mod config;
pub mod output;
pub mod runner;
pub mod scenario;

pub use config::{parse_config, parse_config_with, RunConfig, RunMode};
pub use output::RunReport;
pub use runner::run_scenario;
pub use scenario::{scenario_state, Scenario};

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "NSF_PLATE_OUT";
