//! Command-line harness: single runs, grid scans, time series, finite-size
//! scaling cuts and classical reference runs, with JSON/CSV/SVG output.

pub mod config;
pub mod error;
pub mod fss;
pub mod output;
pub mod plot;
pub mod run;

use std::path::PathBuf;

use config::{ExperimentConfig, Mode};
pub use error::{HarnessError, Result};

/// Runs `config` and writes its outputs; returns the files written.
pub fn execute(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = &config.output;
    match config.mode {
        Mode::Single => output::write_single(dir, &run::run_single(config)?),
        Mode::Scan => output::write_scan(dir, &run::run_scan(config)?),
        Mode::Classical if config.grid.is_some() => output::write_scan(dir, &run::run_scan(config)?),
        Mode::Classical => output::write_single(dir, &run::run_single(config)?),
        Mode::Timeseries => output::write_timeseries(dir, &run::run_timeseries(config)?),
        Mode::Fss => output::write_fss(dir, &fss::run_fss(config)?),
    }
}
