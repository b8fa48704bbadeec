//! Suite runner behind the `eti` binary: configuration, suites and report
//! files.

pub mod config;
pub mod converge;
pub mod error;
pub mod output;
pub mod report;
pub mod runner;
pub mod suites;

use rayon::prelude::*;

use config::RunConfig;
use error::{CliError, Result};
use report::SuiteOutcome;

/// Runs the configured suites on a pool of `jobs` threads (all cores when
/// `None`). Outcomes come back in configuration order.
pub fn run_suites(cfg: &RunConfig, jobs: Option<usize>) -> Result<Vec<SuiteOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cfg.suites.par_iter().map(|s| suites::run_suite(cfg, *s)).collect()))
}
