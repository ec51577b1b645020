//! Parameter sweeps: one run per point of the Cartesian product of the sweep axes.
//!
//! Point `k` writes its artifacts to `out/points/kkkk/`; the aggregate goes to
//! `out/report.json` and `out/timing.json`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{run_to_dir, Command};
use crate::failure::{CliResult, Exit, Failure};
use crate::report::{ensure_dir, write_json, CheckResult, Timing, REPORT_FILE, SWEEP_SCHEMA, TIMING_FILE};
use crate::scenario::{from_document, set_numeric, Overrides, SweepAxis};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    pub index: usize,
    /// Values of the axes at this point, in axis order.
    pub values: Vec<f64>,
    pub exit: Exit,
    pub exit_code: u8,
    pub passed: bool,
    pub worst_drift: Option<f64>,
    pub checks: Vec<CheckResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema: &'static str,
    pub command: String,
    pub axes: Vec<SweepAxis>,
    pub points: Vec<PointSummary>,
    /// Largest drift over all points that ran.
    pub worst_drift: f64,
    pub exit_code: u8,
}

/// Row-major Cartesian product; the last axis varies fastest.
pub fn grid(axes: &[SweepAxis]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

pub fn run_sweep(
    mut doc: serde_json::Value,
    overrides: &Overrides,
    out: &Path,
    workers: usize,
) -> CliResult<(SweepReport, Exit)> {
    let start = Instant::now();
    overrides.apply(&mut doc)?;
    let spec = doc
        .as_object_mut()
        .and_then(|o| o.remove("sweep"))
        .ok_or_else(|| Failure::validation("sweep needs a 'sweep' block in the scenario"))?;
    let spec: crate::scenario::SweepSpec =
        serde_json::from_value(spec).map_err(|e| Failure::parse(format!("sweep: {e}")))?;
    let command: Command = spec.command.parse()?;
    if spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(Failure::validation("every sweep axis needs at least one value"));
    }
    // Fail fast on a base document that does not parse.
    from_document(doc.clone())?;
    let points = grid(&spec.axes);
    ensure_dir(out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Failure::validation(format!("cannot start {workers} workers: {e}")))?;
    let summaries: Vec<PointSummary> = pool.install(|| {
        points
            .par_iter()
            .enumerate()
            .map(|(index, values)| run_point(index, values, &doc, &spec.axes, command, out))
            .collect()
    });

    let worst = summaries.iter().map(|p| p.exit).max().unwrap_or(Exit::Success);
    let report = SweepReport {
        schema: SWEEP_SCHEMA,
        command: command.name().into(),
        axes: spec.axes.clone(),
        worst_drift: summaries.iter().filter_map(|p| p.worst_drift).fold(0.0, f64::max),
        exit_code: worst.code(),
        points: summaries,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_json(
        &out.join(TIMING_FILE),
        &Timing {
            command: format!("sweep {}", command.name()),
            wall_clock_s: start.elapsed().as_secs_f64(),
        },
    )?;
    Ok((report, worst))
}

fn run_point(
    index: usize,
    values: &[f64],
    base: &serde_json::Value,
    axes: &[SweepAxis],
    command: Command,
    out: &Path,
) -> PointSummary {
    let result = (|| {
        let mut doc = base.clone();
        for (axis, &v) in axes.iter().zip(values) {
            set_numeric(&mut doc, &axis.pointer, v)?;
        }
        let scenario = from_document(doc)?;
        run_to_dir(command, &scenario, &out.join("points").join(format!("{index:04}")))
    })();
    match result {
        Ok(outcome) => PointSummary {
            index,
            values: values.to_vec(),
            exit: outcome.exit(),
            exit_code: outcome.exit().code(),
            passed: outcome.report.passed,
            worst_drift: Some(outcome.report.worst_drift()),
            checks: outcome.report.checks,
            error: None,
        },
        Err(failure) => {
            log::error!("sweep point {index}: {failure}");
            PointSummary {
                index,
                values: values.to_vec(),
                exit: failure.exit,
                exit_code: failure.exit.code(),
                passed: false,
                worst_drift: None,
                checks: Vec::new(),
                error: Some(failure.to_string()),
            }
        }
    }
}
