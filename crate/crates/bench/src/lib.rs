//! Shared fixtures for the benchmarks.

use dgnn::experiment::{RunConfig, Setup};

/// Setup for a preset with training turned off.
pub fn setup(preset: &str) -> Setup {
    let cfg = RunConfig::preset(preset).expect("known preset");
    Setup::new(&cfg).expect("preset builds")
}
