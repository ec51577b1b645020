//! Run reports and on-disk artifacts.
//!
//! Every run writes `report.json` (schema [`SCHEMA`]), `timing.json`, and, when the
//! command produces one, `trajectory.csv`. The first CSV line is [`CSV_VERSION`],
//! the second the column names.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::failure::{CliResult, Failure};
use crate::scenario::{Check, RunControls, SystemKind};

pub const SCHEMA: &str = "bearings-report/1";
pub const SWEEP_SCHEMA: &str = "bearings-sweep/1";
pub const CSV_VERSION: &str = "# bearings-trajectory v1";

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub name: String,
    pub initial: f64,
    /// `max_t |F(t) − F(0)| / max(|F(0)|, floor)`.
    pub relative_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    pub fn below(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            threshold,
            pass: measured < threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureSummary {
    pub states: usize,
    pub step: f64,
    /// Largest `|div(μX)|`.
    pub max_weighted: f64,
    /// Smallest and largest `|div X|`, which should stay away from zero.
    pub min_unweighted: f64,
    pub max_unweighted: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    pub max_projection_defect: f64,
}

impl From<bearings::ode::Stats> for IntegratorStats {
    fn from(s: bearings::ode::Stats) -> Self {
        IntegratorStats {
            accepted: s.accepted,
            rejected: s.rejected,
            evaluations: s.evaluations,
            max_projection_defect: s.max_projection_defect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub scenario: String,
    pub system: SystemKind,
    /// Seed of the generator used for random initial states and check samples.
    pub seed: u64,
    pub initial_state_source: &'static str,
    pub initial_state: serde_json::Value,
    pub run: RunControls,
    pub checks_requested: Vec<Check>,
    pub drift: Vec<DriftRow>,
    pub measure: Option<MeasureSummary>,
    pub ansatz: Option<serde_json::Value>,
    pub quadrature: Option<serde_json::Value>,
    pub integrator: Option<IntegratorStats>,
    /// Largest orthogonality defect of the integrated attitudes.
    pub max_attitude_defect: Option<f64>,
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl Report {
    pub fn worst_drift(&self) -> f64 {
        self.drift.iter().map(|r| r.relative_drift).fold(0.0, f64::max)
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn finish(&mut self) {
        self.passed = self.checks.iter().all(|c| c.pass);
    }
}

/// Sampled trajectory with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn write_csv(&self, path: &Path) -> CliResult<()> {
        let mut out = String::with_capacity(self.rows.len() * self.columns.len() * 24);
        out.push_str(CSV_VERSION);
        out.push('\n');
        let mut w = csv::Writer::from_writer(out.into_bytes());
        let io = |e: csv::Error| Failure::io(&path.display().to_string(), e.into());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::io(&path.display().to_string(), e.into_error()))?;
        fs::write(path, bytes).map_err(|e| Failure::io(&path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub command: String,
    pub wall_clock_s: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::io(&path.display().to_string(), e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::io(&path.display().to_string(), e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::io(&path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_version_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let table = Table {
            columns: vec!["t".into(), "x".into()],
            rows: vec![vec![0.0, 1.5], vec![0.5, -2.0]],
        };
        table.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# bearings-trajectory v1\nt,x\n0,1.5\n0.5,-2\n");
    }

    #[test]
    fn below_is_strict() {
        assert!(CheckResult::below("x", 0.5, 1.0).pass);
        assert!(!CheckResult::below("x", 1.0, 1.0).pass);
        assert!(!CheckResult::below("x", f64::NAN, 1.0).pass);
    }
}
