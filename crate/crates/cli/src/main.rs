//! `bearings`: scenario runner for spherical and planar ball bearings.
//!
//! Exit codes: 0 success, 2 parse error, 3 validation error, 4 numerical failure,
//! 5 a requested check failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod failure;
mod report;
mod scenario;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{run_to_dir, Command};
use crate::failure::{CliResult, Exit};
use crate::scenario::{from_document, read_document, Overrides};

#[derive(Parser)]
#[command(name = "bearings", version, about = "Simulate and verify nonholonomic ball bearings")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Integrate a spherical bearing and tabulate its first integrals.
    SimulateSpherical(RunArgs),
    /// Integrate a planar bearing and tabulate its first integrals.
    SimulatePlanar(RunArgs),
    /// Integral drift and invariant measure checks (defaults: integrals, measure).
    CheckInvariants(RunArgs),
    /// Solve the linear and exponential ansatz families and certify the candidates.
    FindIntegrals(RunArgs),
    /// Compare the planar quadrature solution with direct integration.
    CompareQuadrature(RunArgs),
    /// Run the command of the scenario's sweep block at every grid point.
    Sweep(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario document (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Integrator tolerance (relative and absolute).
    #[arg(long)]
    tol: Option<f64>,
    /// Final time in seconds.
    #[arg(long)]
    t_final: Option<f64>,
    /// Number of uniformly spaced samples, including t = 0.
    #[arg(long)]
    samples: Option<usize>,
    /// Seed of the generator for random states.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent sweep points.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            tol: self.tol,
            t_final: self.t_final,
            samples: self.samples,
            seed: self.seed,
        }
    }
}

fn run(sub: Sub) -> CliResult<Exit> {
    let (command, args) = match sub {
        Sub::SimulateSpherical(a) => (Some(Command::SimulateSpherical), a),
        Sub::SimulatePlanar(a) => (Some(Command::SimulatePlanar), a),
        Sub::CheckInvariants(a) => (Some(Command::CheckInvariants), a),
        Sub::FindIntegrals(a) => (Some(Command::FindIntegrals), a),
        Sub::CompareQuadrature(a) => (Some(Command::CompareQuadrature), a),
        Sub::Sweep(a) => (None, a),
    };
    let mut doc = read_document(&args.scenario)?;
    match command {
        Some(command) => {
            args.overrides().apply(&mut doc)?;
            let scenario = from_document(doc)?;
            let outcome = run_to_dir(command, &scenario, &args.out)?;
            for c in outcome.report.checks.iter().filter(|c| !c.pass) {
                log::error!("check {} failed: {:e} >= {:e}", c.name, c.measured, c.threshold);
            }
            Ok(outcome.exit())
        }
        None => {
            let (report, exit) = sweep::run_sweep(doc, &args.overrides(), &args.out, args.workers)?;
            log::info!("sweep of {} points, worst drift {:e}", report.points.len(), report.worst_drift);
            Ok(exit)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(exit) => ExitCode::from(exit.code()),
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit.code())
        }
    }
}
