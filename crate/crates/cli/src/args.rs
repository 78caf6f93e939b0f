use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "epident",
    version,
    about = "Identify epidemic model parameters from cumulative reported cases"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Flat `key = value` file mirroring the long flags; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print every default value with its origin and exit.
    #[arg(long, global = true)]
    pub explain_defaults: bool,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Day 0 for ISO dates (default: first date of the input file).
    #[arg(long, global = true, value_name = "DATE")]
    pub epoch: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a phenomenological model to cumulative cases.
    Fit(FitArgs),
    /// Reconstruct the transmission rate and reproduction numbers.
    Reconstruct(ReconstructArgs),
    /// Simulate the SI or SIUR model.
    Simulate(SimulateArgs),
    /// Window and intervention uncertainty sweep.
    Sweep(SweepArgs),
    /// Age-structured exponential-phase fit.
    Agefit(AgeArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Cumulative-case CSV (`date,cumulative`).
    #[arg(value_name = "FILE")]
    pub file: Option<PathBuf>,

    /// Same as the positional FILE.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Inclusive day range `A:B` (dates or day numbers).
    #[arg(long, value_name = "A:B")]
    pub window: Option<String>,

    /// Remove a reporting jump of MAG cases from DATE on (repeatable).
    #[arg(long = "jump", value_name = "DATE:MAG")]
    pub jumps: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Exp,
    Bv,
    Multiwave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Calendar,
    Anchored,
}

#[derive(Debug, Args)]
pub struct MultiwaveArgs {
    /// Phase boundaries `d0,d1,...` (dates or day numbers).
    #[arg(long, value_name = "LIST")]
    pub breakpoints: Option<String>,

    /// Phase kinds `e|w,...` (endemic or wave), one per interval.
    #[arg(long, value_name = "LIST")]
    pub phases: Option<String>,

    /// Standard deviation of the joining Gaussian, in days.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, value_enum, default_value = "exp")]
    pub model: ModelKind,

    /// Time convention of the reported exponential parameters.
    #[arg(long, value_enum, default_value = "calendar")]
    pub convention: ConventionArg,

    #[command(flatten)]
    pub multiwave: MultiwaveArgs,
}

#[derive(Debug, Args)]
pub struct EpiArgs {
    /// Recovery rate, 1/day.
    #[arg(long)]
    pub nu: Option<f64>,

    /// Fraction of infections that are reported.
    #[arg(long)]
    pub f: Option<f64>,

    /// Initial susceptible population.
    #[arg(long)]
    pub s0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regularization {
    Bv,
    Multiwave,
    Spline,
    Rolling,
    Gauss,
    None,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub epi: EpiArgs,

    /// How the data are regularized before differentiation.
    #[arg(long, value_enum)]
    pub regularize: Option<Regularization>,

    #[command(flatten)]
    pub multiwave: MultiwaveArgs,

    /// Averaging window in days for `rolling` and `gauss`.
    #[arg(long)]
    pub smooth_window: Option<usize>,

    /// Initial infected (default: CR'(t0)/(nu f) of the regularized curve).
    #[arg(long)]
    pub i0: Option<f64>,

    /// Also run the day-by-day reconstruction on the regularized values.
    #[arg(long)]
    pub daywise: bool,

    /// Upper bracket of the day-by-day bisection.
    #[arg(long)]
    pub tau_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    Si,
    Siur,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TauKind {
    Constant,
    Chowell,
    Decay,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "si")]
    pub model: SimModel,

    #[command(flatten)]
    pub epi: EpiArgs,

    /// Unreported-case removal rate, 1/day.
    #[arg(long)]
    pub eta: Option<f64>,

    #[arg(long)]
    pub i0: Option<f64>,

    #[arg(long)]
    pub u0: Option<f64>,

    #[arg(long)]
    pub cr0: Option<f64>,

    #[arg(long)]
    pub t0: Option<f64>,

    #[arg(long, value_enum, default_value = "constant")]
    pub tau_profile: TauKind,

    #[arg(long)]
    pub tau0: Option<f64>,

    /// Decay rate of the transmission rate after the intervention.
    #[arg(long)]
    pub mu: Option<f64>,

    /// First day of the intervention.
    #[arg(long = "intervention", value_name = "DAY")]
    pub intervention: Option<f64>,

    /// Share of transmission removed by the intervention (chowell profile).
    #[arg(long)]
    pub p: Option<f64>,

    /// Simulated days after t0.
    #[arg(long)]
    pub horizon: Option<f64>,

    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub epi: EpiArgs,

    #[arg(long)]
    pub eta: Option<f64>,

    /// Window starts: comma list, `A:B` ranges allowed.
    #[arg(long = "grid-t1", value_name = "LIST")]
    pub grid_t1: Option<String>,

    /// Window ends: comma list, `A:B` ranges allowed.
    #[arg(long = "grid-t2", value_name = "LIST")]
    pub grid_t2: Option<String>,

    /// Intervention days: comma list, `A:B` ranges allowed.
    #[arg(long = "grid-N", value_name = "LIST")]
    pub grid_n: Option<String>,

    /// Reporting fractions: comma list.
    #[arg(long = "f-set", value_name = "LIST")]
    pub f_set: Option<String>,

    /// Retain cells with MAD <= MADmin + band.
    #[arg(long)]
    pub band: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AgeArgs {
    /// Age CSV `date,g0,g1,...`.
    #[arg(value_name = "FILE")]
    pub file: Option<PathBuf>,

    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    #[arg(long, value_name = "A:B")]
    pub window: Option<String>,

    /// Contact matrix CSV, one row per receiving group.
    #[arg(long, value_name = "FILE")]
    pub contact: Option<PathBuf>,

    /// Group populations, comma list.
    #[arg(long, value_name = "LIST")]
    pub populations: Option<String>,

    /// Group susceptibles, comma list (default: the populations).
    #[arg(long, value_name = "LIST")]
    pub susceptibles: Option<String>,

    #[arg(long)]
    pub nu: Option<f64>,

    /// One reporting fraction for every group.
    #[arg(long)]
    pub f: Option<f64>,

    /// Per-group reporting fractions, comma list.
    #[arg(long = "f-set", value_name = "LIST")]
    pub f_set: Option<String>,

    #[arg(long)]
    pub eta: Option<f64>,

    /// If set, simulate the full model this many days from the window start.
    #[arg(long)]
    pub horizon: Option<f64>,
}

/// Long flags that take no value, for config-file expansion.
pub const SWITCHES: &[&str] = &["daywise", "explain-defaults"];

pub const SUBCOMMANDS: &[&str] = &["fit", "reconstruct", "simulate", "sweep", "agefit"];
