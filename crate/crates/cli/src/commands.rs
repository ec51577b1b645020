//! The run subcommands. Each builds a [`Report`] and, where it integrates a
//! trajectory, a [`Table`] of samples.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use bearings::ansatz::{build_linear_system, certify, nullspace, solve_exponential, OneBallConstants, NULLSPACE_DEFAULT_TOL};
use bearings::invariants::{
    integral_case_bc, integrals, is_bc_symmetric, linear_integral, relative_drift, relative_drift_complex,
    verify_measure, Branch, IntegralReport,
};
use bearings::ode::uniform_grid;
use bearings::planar::{
    compare_quadrature, integrate_level, integrate_planar, planar_det, planar_integrals, reduce_to_level_set,
    verify_planar_measure, LevelSetData, LevelState, OrbitQuadrature, PlanarParams, PlanarState,
};
use bearings::sampling::Sampler;
use bearings::spherical::oracle::{integrate_extended, ExtendedState};
use bearings::spherical::{self, ReducedState};
use bearings::{FullState, Mat3, SphericalParams};
use serde_json::json;

use crate::failure::{CliResult, Exit, Failure};
use crate::report::{
    ensure_dir, write_json, CheckResult, DriftRow, MeasureSummary, Report, Table, Timing, REPORT_FILE, SCHEMA,
    TIMING_FILE, TRAJECTORY_FILE,
};
use crate::scenario::{Check, Scenario, SystemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SimulateSpherical,
    SimulatePlanar,
    CheckInvariants,
    FindIntegrals,
    CompareQuadrature,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::SimulateSpherical,
        Command::SimulatePlanar,
        Command::CheckInvariants,
        Command::FindIntegrals,
        Command::CompareQuadrature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateSpherical => "simulate-spherical",
            Command::SimulatePlanar => "simulate-planar",
            Command::CheckInvariants => "check-invariants",
            Command::FindIntegrals => "find-integrals",
            Command::CompareQuadrature => "compare-quadrature",
        }
    }
}

impl FromStr for Command {
    type Err = Failure;

    fn from_str(s: &str) -> CliResult<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Failure::validation(format!("'{s}' is not a run subcommand")))
    }
}

pub struct Outcome {
    pub report: Report,
    pub table: Option<Table>,
}

impl Outcome {
    pub fn exit(&self) -> Exit {
        if self.report.passed {
            Exit::Success
        } else {
            Exit::CheckFailed
        }
    }
}

/// Run `command` and write its artifacts into `out`.
pub fn run_to_dir(command: Command, scenario: &Scenario, out: &Path) -> CliResult<Outcome> {
    let start = Instant::now();
    let outcome = execute(command, scenario)?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure_dir(out)?;
    if let Some(table) = &outcome.table {
        table.write_csv(&out.join(TRAJECTORY_FILE))?;
    }
    write_json(&out.join(REPORT_FILE), &outcome.report)?;
    write_json(
        &out.join(TIMING_FILE),
        &Timing {
            command: command.name().into(),
            wall_clock_s: elapsed,
        },
    )?;
    Ok(outcome)
}

pub fn execute(command: Command, scenario: &Scenario) -> CliResult<Outcome> {
    let mut report = Report {
        schema: SCHEMA,
        command: command.name().into(),
        scenario: scenario.name.clone(),
        system: scenario.system,
        seed: scenario.seed,
        initial_state_source: "given",
        initial_state: serde_json::Value::Null,
        run: scenario.run.clone(),
        checks_requested: scenario.checks.clone(),
        drift: Vec::new(),
        measure: None,
        ansatz: None,
        quadrature: None,
        integrator: None,
        max_attitude_defect: None,
        checks: Vec::new(),
        warnings: Vec::new(),
        passed: false,
    };
    let mut checks = scenario.checks.clone();
    let table = match command {
        Command::SimulateSpherical => {
            scenario.require_system(SystemKind::Spherical, command.name())?;
            run_spherical(scenario, &checks, &mut report)?
        }
        Command::SimulatePlanar => {
            scenario.require_system(SystemKind::Planar, command.name())?;
            run_planar(scenario, &checks, &mut report)?
        }
        Command::CheckInvariants => {
            if checks.is_empty() {
                checks = vec![Check::Integrals, Check::Measure];
            }
            match scenario.system {
                SystemKind::Spherical => run_spherical(scenario, &checks, &mut report)?,
                SystemKind::Planar => run_planar(scenario, &checks, &mut report)?,
            }
        }
        Command::FindIntegrals => {
            run_find_integrals(scenario, &mut report)?;
            None
        }
        Command::CompareQuadrature => {
            scenario.require_system(SystemKind::Planar, command.name())?;
            run_compare(scenario, &mut report)?
        }
    };
    report.finish();
    Ok(Outcome { report, table })
}

fn mat_columns(prefix: &str) -> impl Iterator<Item = String> + '_ {
    (1..=3).flat_map(move |r| (1..=3).map(move |c| format!("{prefix}_{r}{c}")))
}

fn push_mat(row: &mut Vec<f64>, m: &Mat3) {
    for r in 0..3 {
        for c in 0..3 {
            row.push(m[(r, c)]);
        }
    }
}

fn run_spherical(scenario: &Scenario, checks: &[Check], report: &mut Report) -> CliResult<Option<Table>> {
    let spec = scenario.spherical_spec()?;
    let params = spec.params()?;
    let model = params.model();
    let run = &scenario.run;
    let mut sampler = Sampler::new(scenario.seed);
    if spec.initial.is_none() {
        report.initial_state_source = "random";
    }
    let state = spec.initial_state(&params, &mut sampler)?;
    report.initial_state = json!({
        "omega_rad_per_s": state.omega.as_slice(),
        "gammas": state.gammas.iter().map(|g| g.as_slice().to_vec()).collect::<Vec<_>>(),
        "spins_rad_per_s": state.c,
    });
    let n = params.n_balls();
    let times = uniform_grid(run.t_final_s, run.samples);

    let (states, attitudes) = if spec.attitudes {
        let traj = spherical::integrate_full(&params, &FullState::from_reduced(state.clone()), &times, run.tol)
            .map_err(Failure::numerical)?;
        report.integrator = Some(traj.stats.into());
        report.max_attitude_defect =
            Some(traj.states.iter().map(FullState::attitude_defect).fold(0.0, f64::max));
        let reduced = traj.states.iter().map(|s| s.reduced.clone()).collect();
        (reduced, Some(traj.states))
    } else {
        let traj = spherical::integrate(&model, &state, &times, run.tol).map_err(Failure::numerical)?;
        report.integrator = Some(traj.stats.into());
        (traj.states, None)
    };
    let values: Vec<IntegralReport> = states
        .iter()
        .map(|s| integrals(&model, s))
        .collect::<bearings::Result<_>>()
        .map_err(Failure::numerical)?;

    let named = values[0].named_values();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=3).map(|k| format!("omega_{k}")));
    for i in 1..=n {
        columns.extend((1..=3).map(|k| format!("gamma{i}_{k}")));
    }
    if attitudes.is_some() {
        columns.extend(mat_columns("g"));
        for i in 1..=n {
            columns.extend(mat_columns(&format!("g{i}")));
        }
    }
    columns.extend(named.iter().map(|v| v.name.clone()));
    columns.push("mu".into());
    let rows = (0..states.len())
        .map(|k| {
            let s = &states[k];
            let mut row = vec![times[k]];
            row.extend_from_slice(s.omega.as_slice());
            for g in &s.gammas {
                row.extend_from_slice(g.as_slice());
            }
            if let Some(full) = &attitudes {
                push_mat(&mut row, &full[k].g);
                for gb in &full[k].g_balls {
                    push_mat(&mut row, gb);
                }
            }
            row.extend(values[k].named_values().iter().map(|v| v.value));
            row.push(values[k].mu);
            row
        })
        .collect();

    for (j, nv) in named.iter().enumerate() {
        let constant_spin = nv.name.starts_with('c');
        if constant_spin || nv.name.starts_with("F3plus") || nv.name.starts_with("F3minus") {
            continue;
        }
        let series: Vec<f64> = values.iter().map(|v| v.named_values()[j].value).collect();
        report.drift.push(DriftRow {
            name: nv.name.clone(),
            initial: nv.value,
            relative_drift: relative_drift(&series, nv.floor),
        });
    }
    if let Some(bc) = values[0].f3_bc {
        let plus: Vec<_> = values.iter().filter_map(|v| v.f3_bc).map(|p| p.plus).collect();
        let minus: Vec<_> = values.iter().filter_map(|v| v.f3_bc).map(|p| p.minus).collect();
        report.drift.push(DriftRow {
            name: "F3plus".into(),
            initial: bc.plus.norm(),
            relative_drift: relative_drift_complex(&plus),
        });
        report.drift.push(DriftRow {
            name: "F3minus".into(),
            initial: bc.minus.norm(),
            relative_drift: relative_drift_complex(&minus),
        });
    }

    for check in checks {
        match check {
            Check::Integrals => {
                spin_drift(&params, &state, &times, run.tol, report)?;
                let t = scenario.thresholds.integral_drift;
                let rows: Vec<CheckResult> = report
                    .drift
                    .iter()
                    .filter(|r| !r.name.starts_with("F3"))
                    .map(|r| CheckResult::below(format!("integrals/{}", r.name), r.relative_drift, t))
                    .collect();
                report.checks.extend(rows);
            }
            Check::F3 => {
                let t = scenario.thresholds.third_integral_drift;
                let rows: Vec<CheckResult> = report
                    .drift
                    .iter()
                    .filter(|r| r.name.starts_with("F3"))
                    .map(|r| CheckResult::below(r.name.clone(), r.relative_drift, t))
                    .collect();
                if rows.is_empty() {
                    return Err(Failure::validation(format!(
                        "the F3 check needs one ball with epsilon = -1 or B = C (n = {n}, epsilon = {}, inertia = {:?})",
                        model.epsilon,
                        model.inertia.as_slice()
                    )));
                }
                report.checks.extend(rows);
            }
            Check::Measure => {
                let mut draws = vec![state.clone()];
                for _ in 0..run.random_states {
                    draws.push(sampler.reduced_state(&params).map_err(Failure::numerical)?);
                }
                let residuals = draws
                    .iter()
                    .map(|s| verify_measure(&model, s, run.measure_step).map(|r| (r.weighted, r.unweighted)))
                    .collect::<bearings::Result<Vec<_>>>()
                    .map_err(Failure::numerical)?;
                measure_summary(&residuals, run.measure_step, scenario.thresholds.measure_residual, report);
            }
            Check::Ansatz => {
                if n != 1 {
                    report.warn(format!("ansatz check skipped: defined for one ball, scenario has {n}"));
                    continue;
                }
                let k = OneBallConstants::from_params(&params, state.c[0]).map_err(Failure::numerical)?;
                ansatz_section(&k, scenario, &mut sampler, report)?;
            }
            Check::QuadratureCompare => {
                report.warn("quadrature-compare check skipped: defined for the planar system");
            }
        }
    }
    Ok(Some(Table { columns, rows }))
}

/// Drift of `c_i = ⟨Ω_i, Γ_i⟩` along the Newton–Euler flow, where the spins are free.
fn spin_drift(
    params: &SphericalParams,
    state: &ReducedState,
    times: &[f64],
    tol: f64,
    report: &mut Report,
) -> CliResult<()> {
    let ext = integrate_extended(params, &ExtendedState::from_reduced(params, state), times, tol)
        .map_err(Failure::numerical)?;
    let spins: Vec<Vec<f64>> = ext.states.iter().map(ExtendedState::spins).collect();
    for i in 0..state.n_balls() {
        let series: Vec<f64> = spins.iter().map(|s| s[i]).collect();
        report.drift.push(DriftRow {
            name: format!("c{}", i + 1),
            initial: series[0],
            relative_drift: relative_drift(&series, 1.0),
        });
    }
    Ok(())
}

fn measure_summary(residuals: &[(f64, f64)], step: f64, threshold: f64, report: &mut Report) {
    let max_weighted = residuals.iter().map(|r| r.0.abs()).fold(0.0, f64::max);
    report.measure = Some(MeasureSummary {
        states: residuals.len(),
        step,
        max_weighted,
        min_unweighted: residuals.iter().map(|r| r.1.abs()).fold(f64::INFINITY, f64::min),
        max_unweighted: residuals.iter().map(|r| r.1.abs()).fold(0.0, f64::max),
    });
    report.checks.push(CheckResult::below("measure", max_weighted, threshold));
}

fn planar_initial_json(s: &PlanarState) -> serde_json::Value {
    json!({ "v": s.v.as_slice(), "n": s.n.as_slice() })
}

fn run_planar(scenario: &Scenario, checks: &[Check], report: &mut Report) -> CliResult<Option<Table>> {
    let spec = scenario.planar_spec()?;
    let params = spec.params()?;
    let run = &scenario.run;
    let mut sampler = Sampler::new(scenario.seed);
    if spec.initial.is_none() {
        report.initial_state_source = "random";
    }
    let state = spec.initial_state(&params, &mut sampler)?;
    report.initial_state = planar_initial_json(&state);
    let times = uniform_grid(run.t_final_s, run.samples);
    let states = integrate_planar(&params, &state, &times, run.tol).map_err(Failure::numerical)?;

    let columns: Vec<String> = ["t", "v_x", "v_y", "v_phi", "n_1", "n_2", "n_3", "f1", "f2", "f3", "f4", "mu"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let values: Vec<[f64; 4]> = states.iter().map(|s| planar_integrals(&params, s).as_array()).collect();
    let rows = states
        .iter()
        .zip(&times)
        .zip(&values)
        .map(|((s, &t), f)| {
            let mut row = vec![t];
            row.extend_from_slice(s.v.as_slice());
            row.extend_from_slice(s.n.as_slice());
            row.extend_from_slice(f);
            row.push(planar_det(&params, &s.n).sqrt());
            row
        })
        .collect();

    // f₃ is a difference of terms of size δM, which grows with the orbit.
    let f3_floor = params.delta() * states.iter().map(|s| s.n.z.abs()).fold(0.0, f64::max);
    for k in 0..4 {
        let series: Vec<f64> = values.iter().map(|v| v[k]).collect();
        let floor = if k == 2 { f3_floor } else { 1.0 };
        report.drift.push(DriftRow {
            name: format!("f{}", k + 1),
            initial: series[0],
            relative_drift: relative_drift(&series, floor),
        });
    }

    for check in checks {
        match check {
            Check::Integrals => {
                let t = scenario.thresholds.integral_drift;
                let rows: Vec<CheckResult> = report
                    .drift
                    .iter()
                    .map(|r| CheckResult::below(format!("integrals/{}", r.name), r.relative_drift, t))
                    .collect();
                report.checks.extend(rows);
            }
            Check::F3 => {
                let r = &report.drift[2];
                let check = CheckResult::below("f3", r.relative_drift, scenario.thresholds.third_integral_drift);
                report.checks.push(check);
            }
            Check::Measure => {
                let mut draws = vec![state];
                for _ in 0..run.random_states {
                    draws.push(sampler.planar_state(&params, 1.0).map_err(Failure::numerical)?);
                }
                let residuals = draws
                    .iter()
                    .map(|s| verify_planar_measure(&params, s, run.measure_step).map(|r| (r.weighted, r.unweighted)))
                    .collect::<bearings::Result<Vec<_>>>()
                    .map_err(Failure::numerical)?;
                measure_summary(&residuals, run.measure_step, scenario.thresholds.measure_residual, report);
            }
            Check::QuadratureCompare => {
                quadrature_section(&params, &state, scenario, report)?;
            }
            Check::Ansatz => {
                report.warn("ansatz check skipped: defined for the one-ball spherical system");
            }
        }
    }
    Ok(Some(Table { columns, rows }))
}

/// Compare the quadrature with direct integration of the level system. Orbits with
/// `k = 0` or without two turning points fall back to direct integration only.
fn quadrature_section(
    params: &PlanarParams,
    state: &PlanarState,
    scenario: &Scenario,
    report: &mut Report,
) -> CliResult<Option<(LevelSetData, LevelState, OrbitQuadrature)>> {
    let (level, initial) = reduce_to_level_set(params, state).map_err(Failure::numerical)?;
    let orbit = if level.k == 0.0 {
        Err("k = 0: A is constant on this level set".to_string())
    } else {
        OrbitQuadrature::new(&level, &initial).map_err(|e| e.to_string())
    };
    let orbit = match orbit {
        Ok(orbit) => orbit,
        Err(reason) => {
            report.warn(format!("quadrature unavailable, direct integration only: {reason}"));
            report.quadrature = Some(json!({ "available": false, "reason": reason, "level_set": level }));
            return Ok(None);
        }
    };
    let run = &scenario.run;
    let times = uniform_grid(run.t_final_s, run.samples);
    let cmp = compare_quadrature(&level, &initial, &times, run.tol).map_err(Failure::numerical)?;
    let th = &scenario.thresholds;
    report
        .checks
        .push(CheckResult::below("quadrature-compare", cmp.max_a_deviation, th.quadrature_deviation));
    report.checks.push(CheckResult::below(
        "quadrature-energy",
        cmp.energy_drift_quadrature.max(cmp.energy_drift_ode),
        th.energy_drift,
    ));
    report.quadrature = Some(json!({ "available": true, "level_set": level, "comparison": cmp }));
    Ok(Some((level, initial, orbit)))
}

fn run_compare(scenario: &Scenario, report: &mut Report) -> CliResult<Option<Table>> {
    let spec = scenario.planar_spec()?;
    let params = spec.params()?;
    let run = &scenario.run;
    let mut sampler = Sampler::new(scenario.seed);
    if spec.initial.is_none() {
        report.initial_state_source = "random";
    }
    let state = spec.initial_state(&params, &mut sampler)?;
    report.initial_state = planar_initial_json(&state);
    let times = uniform_grid(run.t_final_s, run.samples);
    let section = quadrature_section(&params, &state, scenario, report)?;
    let (level, initial) = match &section {
        Some((level, initial, _)) => (*level, *initial),
        None => reduce_to_level_set(&params, &state).map_err(Failure::numerical)?,
    };
    let direct = integrate_level(&level, &initial, &times, run.tol).map_err(Failure::numerical)?;
    let mut columns: Vec<String> = ["t", "v_phi", "n_1", "n_2", "a", "theta"].iter().map(|s| s.to_string()).collect();
    if section.is_some() {
        columns.extend(["a_quadrature", "theta_quadrature", "v_phi_quadrature"].iter().map(|s| s.to_string()));
    }
    columns.extend(["modified_energy", "mu"].iter().map(|s| s.to_string()));
    let mut rows = Vec::with_capacity(times.len());
    for (&t, d) in times.iter().zip(&direct) {
        let a = d.radius();
        let mut row = vec![t, d.v_phi, d.n1, d.n2, a, d.angle()];
        if let Some((_, _, orbit)) = &section {
            let q = orbit.sample(t).map_err(Failure::numerical)?;
            row.extend([q.a, q.theta, q.v_phi]);
        }
        row.push(level.modified_energy(d.v_phi, a));
        row.push(level.det(a).sqrt());
        rows.push(row);
    }
    Ok(Some(Table { columns, rows }))
}

fn run_find_integrals(scenario: &Scenario, report: &mut Report) -> CliResult<()> {
    let mut sampler = Sampler::new(scenario.seed);
    let k = match (&scenario.ansatz, scenario.system) {
        (Some(spec), _) => spec.constants()?,
        (None, SystemKind::Spherical) => {
            let spec = scenario.spherical_spec()?;
            let params = spec.params()?;
            if params.n_balls() != 1 {
                return Err(Failure::validation(format!(
                    "find-integrals is defined for one ball, scenario has {}",
                    params.n_balls()
                )));
            }
            if spec.initial.is_none() {
                report.initial_state_source = "random";
            }
            let state = spec.initial_state(&params, &mut sampler)?;
            OneBallConstants::from_params(&params, state.c[0]).map_err(Failure::invalid)?
        }
        (None, SystemKind::Planar) => {
            return Err(Failure::validation(
                "find-integrals needs an 'ansatz' block or a one-ball spherical scenario",
            ))
        }
    };
    report.initial_state = json!({ "constants": k });
    ansatz_section(&k, scenario, &mut sampler, report)
}

/// Nullspace of the linear ansatz, the exponential family when `B = C`, and trajectory
/// certification of every candidate on random states with `c₁ = d`.
fn ansatz_section(
    k: &OneBallConstants,
    scenario: &Scenario,
    sampler: &mut Sampler,
    report: &mut Report,
) -> CliResult<()> {
    let run = &scenario.run;
    let model = k.model();
    let basis = nullspace(&build_linear_system(k), NULLSPACE_DEFAULT_TOL).map_err(Failure::numerical)?;
    let states = (0..run.random_states.max(1))
        .map(|_| ReducedState::new(sampler.vector(1.0), vec![sampler.unit_vector()], vec![k.small_d]))
        .collect::<bearings::Result<Vec<_>>>()
        .map_err(Failure::numerical)?;

    let mut worst: f64 = 0.0;
    let mut linear = Vec::with_capacity(basis.len());
    for x in &basis {
        let cert = certify(|s| Ok(linear_integral(&model, s, x)), &model, &states, run.t_final_s, run.tol)
            .map_err(Failure::numerical)?;
        worst = worst.max(cert.max_relative_drift);
        linear.push(json!({
            "weights": x.as_slice(),
            "max_relative_drift": cert.max_relative_drift,
        }));
    }

    let mut exponential = serde_json::Value::Null;
    if is_bc_symmetric(&model) {
        let sol = solve_exponential(k.a, k.c, k.big_d, k.small_d, k.epsilon).map_err(Failure::numerical)?;
        let drift = if sol.degenerate {
            None
        } else {
            let times = uniform_grid(run.t_final_s, 101);
            let mut d: f64 = 0.0;
            for s0 in &states {
                let traj = spherical::integrate(&model, s0, &times, run.tol).map_err(Failure::numerical)?;
                for branch in [Branch::Plus, Branch::Minus] {
                    let values = traj
                        .states
                        .iter()
                        .map(|s| integral_case_bc(&model, s, branch))
                        .collect::<bearings::Result<Vec<_>>>()
                        .map_err(Failure::numerical)?;
                    d = d.max(relative_drift_complex(&values));
                }
            }
            worst = worst.max(d);
            Some(d)
        };
        exponential = json!({ "solution": sol, "max_relative_drift": drift });
    }

    let threshold = scenario.thresholds.ansatz_drift;
    report.ansatz = Some(json!({
        "constants": k,
        "nullspace_tolerance": NULLSPACE_DEFAULT_TOL,
        "nullspace_dimension": basis.len(),
        "linear": linear,
        "exponential": exponential,
        "certification_states": states.len(),
        "certification_span_s": run.t_final_s,
    }));
    if basis.is_empty() && exponential.is_null() {
        report.warn("no candidate integral in either ansatz family");
    }
    report.checks.push(CheckResult::below("ansatz", worst, threshold));
    Ok(())
}
