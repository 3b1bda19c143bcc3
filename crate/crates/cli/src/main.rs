//! `mfl`: simulate benchmarks, infer marginals, sample paths, evaluate.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime error.
//! Log level comes from `RUST_LOG` (default `warn`).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "mfl", version, about = "Trajectory inference by mean-field Langevin dynamics")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark and write observed and ground-truth snapshots.
    Simulate(SimulateArgs),
    /// Run the particle dynamics on snapshot data.
    Infer(InferArgs),
    /// Sample trajectories from a finished run.
    SamplePaths(SamplePathsArgs),
    /// Score a finished run against ground truth.
    Evaluate(EvaluateArgs),
    /// simulate, infer, sample-paths and evaluate in one go.
    FullRun(FullRunArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum BenchmarkName {
    Bifurcation,
    Bistable,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub benchmark: BenchmarkName,
    /// Particles per interior timepoint (first and last get 64). Defaults to
    /// 64 for bifurcation and 50 everywhere for bistable.
    #[arg(long = "N", alias = "n")]
    pub n: Option<usize>,
    /// Branching in the bistable simulation.
    #[arg(long, value_enum, default_value = "on")]
    pub growth: Switch,
    #[arg(long, default_value_t = 500)]
    pub truth_per_time: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[arg(long, required_unless_present_any = ["from_manifest", "resume"])]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_manifest")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Re-run exactly what a previous manifest records.
    #[arg(long, conflicts_with_all = ["config", "data", "resume"])]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SamplePathsArgs {
    /// Output directory of `infer`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Grid points per interval, endpoints included.
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Ground-truth snapshot CSV at the same times as the data.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report the fraction of sampled paths in this benchmark's lower branch.
    #[arg(long, value_enum)]
    pub branch: Option<BenchmarkName>,
}

#[derive(Args, Debug, Clone)]
pub struct FullRunArgs {
    #[command(flatten)]
    pub simulate: SimulateArgs,
    /// Inference config; defaults to the benchmark's settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fit with the known growth prior (bistable only).
    #[arg(long, value_enum, default_value = "on")]
    pub infer_growth: Switch,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 20)]
    pub grid: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Infer(a) => commands::infer(a, &argv),
        Command::SamplePaths(a) => commands::sample_paths(a, &argv),
        Command::Evaluate(a) => commands::evaluate(a, &argv),
        Command::FullRun(a) => commands::full_run(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
