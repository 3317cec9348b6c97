//! Machine-readable command reports.

use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when the value stays at or below the tolerance.
    pub fn upper(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    /// Passes when the value is at or above the bound (the bound is reported
    /// in the tolerance field).
    pub fn lower(name: &str, value: f64, bound: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance: bound,
            pass: value >= bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    /// Wall-clock seconds; excluded from determinism guarantees.
    pub timings: BTreeMap<String, f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub results: Option<serde_json::Value>,
}

impl Report {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        Report {
            command: command.to_string(),
            config,
            checks: Vec::new(),
            timings: BTreeMap::new(),
            seed,
            results: None,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
