//! `annokn`: annotation-informed knockoff selection from the command line.

mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Failure;

const PRECEDENCE: &str = "Settings are resolved as: command-line flags, then keys from --config, then built-in defaults.";

#[derive(Parser)]
#[command(name = "annokn", version, about = "Annotation-informed knockoff variable selection", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an AR(1) simulation scenario and write power/FDP tables.
    Simulate(SimulateArgs),
    /// Fit on individual-level data (design TSV).
    Fit(FitArgs),
    /// Fit on summary statistics and an LD matrix.
    FitSs(FitSsArgs),
    /// Generate a knockoff copy of a design, or knockoff z-scores from an LD matrix.
    KnockoffGen(KnockoffGenArgs),
    /// Merge several selection tables into union/intersection summaries.
    Report(ReportArgs),
}

/// Flags shared by the fitting and simulation commands.
#[derive(Args, Clone, Debug, Default)]
pub struct Tuning {
    /// Random seed; a fresh one is generated and printed when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: available cores). Output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Annotation scaling d (default √L).
    #[arg(long)]
    pub d: Option<f64>,
    /// Prior variance τ² of the annotation effects.
    #[arg(long)]
    pub tau2: Option<f64>,
    /// λ₀ grid: `count:lo_frac` relative to λ_max, or a comma-separated list.
    #[arg(long = "lambda0-grid")]
    pub lambda0_grid: Option<String>,
    /// key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(after_help = PRECEDENCE)]
pub struct SimulateArgs {
    /// Scenario file (key = value).
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario's replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated target FDR levels.
    #[arg(long = "q-grid")]
    pub q_grid: Option<String>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
#[command(after_help = PRECEDENCE)]
pub struct FitArgs {
    /// Design TSV: `id <cov1> ... <covp> y`.
    #[arg(long)]
    pub design: PathBuf,
    /// Annotation TSV: `snp <anno1> ... <annoL>`, rows keyed by covariate name.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Pre-generated knockoff design (as written by `knockoff-gen`).
    #[arg(long)]
    pub knockoffs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Target FDR level.
    #[arg(long)]
    pub q: Option<f64>,
    /// Shrinkage toward the identity for the in-sample LD used to build knockoffs.
    #[arg(long)]
    pub shrinkage: Option<f64>,
    /// Use the lighter one-pass weight update.
    #[arg(long)]
    pub lite: bool,
    /// Plain Lasso knockoffs with unit penalty weights.
    #[arg(long = "no-annotations")]
    pub no_annotations: bool,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
#[command(after_help = PRECEDENCE)]
pub struct FitSsArgs {
    /// Summary statistics TSV: `snp z`.
    #[arg(long)]
    pub sumstats: PathBuf,
    /// LD matrix (LDMX binary or p×p TSV without header).
    #[arg(long)]
    pub ld: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// GWAS sample size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub q: Option<f64>,
    /// LD shrinkage ε in `(1 − ε)Σ + εI`.
    #[arg(long)]
    pub shrinkage: Option<f64>,
    /// GhostKnockoff Lasso with unit penalty weights.
    #[arg(long = "no-annotations")]
    pub no_annotations: bool,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct KnockoffGenArgs {
    /// Design TSV to knock off.
    #[arg(long, conflicts_with = "ld", required_unless_present = "ld")]
    pub design: Option<PathBuf>,
    /// LD matrix; requires --sumstats.
    #[arg(long, requires = "sumstats")]
    pub ld: Option<PathBuf>,
    #[arg(long)]
    pub sumstats: Option<PathBuf>,
    #[arg(long)]
    pub shrinkage: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Selection TSVs (`snp w q_value selected`).
    #[arg(required = true)]
    pub selections: Vec<PathBuf>,
    /// Optional `snp region` TSV for per-region counts.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::FitSs(a) => commands::fit_ss(a),
        Command::KnockoffGen(a) => commands::knockoff_gen(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, kind, err) = match &f {
                Failure::Usage(e) => (2, "error", e),
                Failure::Runtime(e) => (1, "runtime error", e),
            };
            eprintln!("{kind}: {err:#}");
            ExitCode::from(code)
        }
    }
}
