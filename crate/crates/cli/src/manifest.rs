//! Reproducibility record written next to every run's outputs.

use std::collections::BTreeMap;

use fedsim_core::engine::ExperimentConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of the canonical config document.
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub rounds_requested: usize,
    pub rounds_completed: usize,
    /// Simulated clock at the start and end of the run, in seconds.
    pub sim_time_start_s: f64,
    pub sim_time_end_s: f64,
    /// Output files by role, relative to the manifest's directory.
    pub outputs: BTreeMap<String, String>,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    /// Config after command-line overrides.
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
