//! `eventflow`: simulate, track, learn, plan and evaluate traffic scenarios.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<eventflow::Error> for CliError {
    fn from(e: eventflow::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eventflow", version, about = "Discrete-event traffic simulation, tracking and planning")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Random seed (defaults to the scenario's seed where there is one).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// File of `key = value` lines naming flags of the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the SynthTown scenario file.
    Synthtown(SynthtownArgs),
    /// Simulate a scenario: event log, count matrix, probe observations.
    Simulate(SimulateArgs),
    /// Particle-filter probe observations into count estimates and forecasts.
    Track(TrackArgs),
    /// Learn SKM rate constants from noisy population counts.
    Learn(LearnArgs),
    /// Plan route and departure policies from a belief state.
    Plan(PlanArgs),
    /// Score estimates and trips against ground truth.
    Eval(EvalArgs),
}

pub const SUBCOMMANDS: &[&str] = &["synthtown", "simulate", "track", "learn", "plan", "eval"];

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthtownArgs {}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Policy JSON that drives route and departure choices.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrackArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Probe observations CSV (`time_step,location_id,probe_count`).
    #[arg(long)]
    pub observations: PathBuf,
    /// Number of particles K.
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    /// Forecast offsets, e.g. `now,10m,60m` (units s, m, h).
    #[arg(long, default_value = "now,10m,60m")]
    pub horizons: String,
    /// Time between reported estimates.
    #[arg(long, default_value = "10m")]
    pub report_every: String,
    /// Particles propagated for each forecast (default: all).
    #[arg(long)]
    pub forecast_subset: Option<usize>,
    /// Resample only when the ESS falls below this fraction of K.
    #[arg(long)]
    pub ess_threshold: Option<f64>,
    /// Restart from the prior instead of failing on filter collapse.
    #[arg(long)]
    pub rejuvenate: bool,
    /// Also write the final ensemble as `ensemble.snap`.
    #[arg(long)]
    pub snapshot: bool,
    /// Stop at this time of day (default: the end of the grid); later
    /// observations are ignored.
    #[arg(long)]
    pub until: Option<String>,
    /// Ground-truth counts CSV; adds `metrics.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnArgs {
    /// SKM definition JSON (`skm/1`).
    #[arg(long)]
    pub model: PathBuf,
    /// Observations CSV (`time_step,location_id,probe_count`) with species
    /// names as location ids.
    #[arg(long)]
    pub observations: PathBuf,
    /// Grid time step.
    #[arg(long)]
    pub tau: f64,
    /// Number of grid steps.
    #[arg(long)]
    pub horizon: u64,
    /// Each individual is seen independently with this probability.
    #[arg(long, default_value_t = 1.0)]
    pub detection: f64,
    /// Starting rate constants, e.g. `death=0.5,birth=2`.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    /// Outer (filter and smooth) iterations.
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Gradient steps per outer iteration.
    #[arg(long, default_value_t = 50)]
    pub inner: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Belief ensemble snapshot (default: the scenario's initial state).
    #[arg(long)]
    pub belief: Option<PathBuf>,
    /// `finite` or `discounted`.
    #[arg(long, default_value = "finite")]
    pub mixture: String,
    /// Rollout horizon in steps for the finite mixture (default: to the end
    /// of the grid).
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Per-step discount for the discounted mixture.
    #[arg(long)]
    pub discount: Option<f64>,
    /// Length-distribution parameter of the discounted mixture (default
    /// `(1 + discount) / 2`).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Rollouts per EM iteration.
    #[arg(long, default_value_t = 100)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Starting policy JSON (default: uniform).
    #[arg(long)]
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Ground-truth counts CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Estimates CSV from `track`.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Event log CSV; adds trip metrics.
    #[arg(long)]
    pub events: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<_> = std::env::args_os().collect();
    let argv = match config::expand(argv, SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("eventflow: {e}");
    ExitCode::from(e.code())
}
