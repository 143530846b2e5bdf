//! `polylab`: runs one experiment or a manifest of them.
//!
//! Exit codes: 0 when no check is violated, 2 when one is, 1 on error.

mod config;
mod experiments;
mod report;
mod suite;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::*;

#[derive(Parser)]
#[command(name = "polylab", version, about = "Directed polymers, m-trees, spin glasses and stochastic-order checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Run<F: Args> {
    /// JSON file of parameters; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $POLYLAB_OUT_DIR, else ./polylab-out)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    flags: F,
}

#[derive(Subcommand)]
enum Command {
    /// Point-to-line partition functions of the lattice polymer
    Polymer(Run<PolymerFlags>),
    /// Free-energy upper bound from m-tree population dynamics
    Mtree(Run<MtreeFlags>),
    /// Monte Carlo stochastic-order check between two models
    OrderCheck(Run<OrderFlags>),
    /// Convex-order increase of W along a beta grid
    Peacock(Run<PeacockFlags>),
    /// Peacock check for SK, EA and RFIM models
    Spinglass(Run<SpinFlags>),
    /// Path covariance comparison and Gaussian Monte Carlo checks
    GaussianCov(Run<GaussianFlags>),
    /// Laplace domination of renormalized point-to-point partition functions
    SheScaling(Run<ScalingFlags>),
    /// Exact Laplace certificate by enumeration
    Oracle(Run<OracleFlags>),
    /// Run a JSON manifest of experiments
    Suite(SuiteArgs),
}

#[derive(Args)]
struct SuiteArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop at the first failing experiment
    #[arg(long, conflicts_with = "continue_on_error")]
    fail_fast: bool,
    /// Keep going after errors (the default)
    #[arg(long)]
    continue_on_error: bool,
    /// Experiments run concurrently
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

fn single<P: DeserializeOwned + Serialize, F: Args + Serialize>(name: &str, run: Run<F>) -> Result<i32> {
    let params: P = resolve(run.config.as_deref(), &run.flags)?;
    let dir = output_dir(run.out).join(name);
    let report = experiments::run(name, serde_json::to_value(&params)?, &dir)?;
    for c in &report.checks {
        println!("{:<13} {}  ({})", format!("{:?}", c.status).to_uppercase(), c.name, c.detail);
    }
    println!("report: {}", dir.join("report.json").display());
    Ok(report.exit_code())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Polymer(r) => single::<PolymerParams, _>("polymer", r),
        Command::Mtree(r) => single::<MtreeParams, _>("mtree", r),
        Command::OrderCheck(r) => single::<OrderParams, _>("order-check", r),
        Command::Peacock(r) => single::<PeacockParams, _>("peacock", r),
        Command::Spinglass(r) => single::<SpinParams, _>("spinglass", r),
        Command::GaussianCov(r) => single::<GaussianParams, _>("gaussian-cov", r),
        Command::SheScaling(r) => single::<ScalingParams, _>("she-scaling", r),
        Command::Oracle(r) => single::<OracleParams, _>("oracle", r),
        Command::Suite(a) => {
            let entries = suite::read_manifest(&a.manifest)?;
            let out = output_dir(a.out).join("suite");
            let summary = suite::run_suite(&entries, &out, a.fail_fast, a.parallel.max(1))?;
            for r in &summary.rows {
                println!("{:<9} {:>3} {} ({})", format!("{:?}", r.status).to_uppercase(), r.index, r.name, r.experiment);
                if let Some(e) = &r.error {
                    println!("          {e}");
                }
            }
            println!("summary: {}", out.join("summary.json").display());
            Ok(summary.exit_code)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
