//! Scenario files, run outputs and the preset experiments.

pub mod output;
pub mod presets;
pub mod scenario;

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::world::simulate;
use output::{write_run, Summary};
use scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("writing results: {0}")]
    Io(#[from] io::Error),
    #[error("invariant violated: {}", .0.join("; "))]
    Invariant(Vec<String>),
}

/// Loads `path`, runs it with `seed` until drained and writes every
/// artifact into `out_dir`.
pub fn run_scenario(path: &Path, seed: u64, out_dir: &Path) -> Result<Summary, HarnessError> {
    let mut s = Scenario::load(path)?;
    s.seed = seed;
    let catalogs = s.resolve()?;
    let r = simulate(&s, catalogs);
    let v = r.violations();
    if !v.is_empty() {
        return Err(HarnessError::Invariant(v));
    }
    Ok(write_run(&r, out_dir)?)
}
