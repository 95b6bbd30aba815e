mod commands;
mod draws;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "BNMM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bnmm", version, about = "Bayesian network mediation with latent block-model mediators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Score block counts with the ICL and report the best one.
    SelectQ(SelectQArgs),
    /// Run the Gibbs sampler and store the posterior draws.
    Fit(FitArgs),
    /// Summarise a fit: effects, convergence, traces and the edge mask.
    Report(ReportArgs),
    /// Simulate-and-fit replicates with recovery metrics.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Full,
    Desk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExposureArg {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IclArg {
    Layered,
    Pooled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    BlockAverage,
    Random,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Scenario 1 (shared active set) or 2 (overlapping active sets).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub scenario: u8,
    #[arg(long, value_enum, default_value_t = NoiseArg::Low)]
    pub noise: NoiseArg,
    /// `full`: 50 subjects, 6 scans, 100 nodes, 10 blocks. `desk`: 60 nodes, 6 blocks, 4 scans.
    #[arg(long, value_enum, default_value_t = PresetArg::Full)]
    pub preset: PresetArg,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub scans: Option<usize>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, value_enum)]
    pub exposure: Option<ExposureArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SelectQArgs {
    /// Subjects table.
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate block counts as `min:max`.
    #[arg(long, default_value = "2:10")]
    pub q_range: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = IclArg::Layered)]
    pub icl: IclArg,
    /// Write the ICL table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Subjects table.
    #[arg(long)]
    pub data: PathBuf,
    /// Block count; chosen by the ICL over `--q-range` when absent.
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub q_range: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// JSON fit configuration, or the manifest of an earlier fit.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Centre and scale the non-intercept covariates.
    #[arg(long)]
    pub standardize: bool,
    /// Update the outcome coefficients one block at a time.
    #[arg(long)]
    pub conditional_outcome: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Output directory; defaults to `<fit>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    /// Exposure contrast as `z,z_star`.
    #[arg(long)]
    pub contrast: Option<String>,
    /// Use split-chain PSRF.
    #[arg(long)]
    pub split: bool,
    #[arg(long, default_value_t = 1.1)]
    pub psrf_threshold: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn: usize,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn configure_threads() -> CliResult<()> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::SelectQ(a) => commands::select_q(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Report(a) => commands::report(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
