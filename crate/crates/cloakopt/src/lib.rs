//! File formats, scenario configuration and the command-line driver for
//! [`cloakopt_core`].

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod meshio;

pub use commands::{build_problem, run, Command, Outcome, RunOptions};
pub use config::{load_config, parse_config, ScenarioConfig};
pub use error::{CliError, ParseError};

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "CLOAKOPT_THREADS";

/// Thread count from the environment, else the command line, else `None`.
pub fn resolve_threads(cli: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    let n = match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => Some(
            s.parse::<usize>()
                .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
        ),
        None => cli,
    };
    match n {
        Some(0) => Err(CliError::Config("thread count must be at least 1".into())),
        other => Ok(other),
    }
}
