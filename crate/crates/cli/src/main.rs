//! `repexp`: batch driver for representation-based exploration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod bonus;
mod output;
mod report;
mod select;
mod simulate;
mod synth;

use output::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "repexp",
    version,
    about = "Representation-based exploration over embedding pools"
)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "REPEXP_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Order each pool by greedy elliptic selection (or uniformly) and report
    /// samples-to-correct and pass@k.
    Select(SelectArgs),
    /// Add leverage-score bonuses to rollout-group rewards.
    Bonus(BonusArgs),
    /// Bonus-guided decoding over the toy sequence model.
    Simulate(SimulateArgs),
    /// Write synthetic Gaussian-mixture pools.
    Synth(SynthArgs),
    /// Rebuild report files from a finished selection run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Pool manifest (JSONL).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Responses to select per pool; defaults to the whole pool.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = repexp::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Working dimension after projection.
    #[arg(long, default_value_t = repexp::DEFAULT_WORKING_DIM)]
    pub dim: usize,
    /// Projection sparsity; defaults to the square root of the input dimension.
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// `repexp` or `random`.
    #[arg(long, default_value = "repexp")]
    pub method: repexp::selection::Method,
}

#[derive(Debug, Args)]
pub struct BonusArgs {
    /// Manifest of rollout groups, one labelled pool per group.
    #[arg(long)]
    pub groups: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of this optimization step's projections.
    #[arg(long)]
    pub step_seed: u64,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Long-context preset: projection dimension 128.
    #[arg(long)]
    pub long_context: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Generations per prompt.
    #[arg(long, default_value_t = 16)]
    pub generations: usize,
    #[arg(long, default_value_t = repexp::guided::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = repexp::guided::DEFAULT_TOP_P)]
    pub top_p: f64,
    #[arg(long, default_value_t = repexp::guided::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 16)]
    pub max_len: usize,
    /// Plain top-k/top-p sampling.
    #[arg(long)]
    pub vanilla: bool,
    /// Comma-separated prompt tokens; repeat for several prompts.
    #[arg(long, value_delimiter = None)]
    pub prompt: Vec<String>,
    #[arg(long, default_value_t = 48)]
    pub vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 7)]
    pub model_seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a `select` run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pool manifest; defaults to the one recorded by the run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn thread_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Io(format!("cannot start worker pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    let pool = thread_pool(cli.threads)?;
    match cli.command {
        Command::Select(a) => pool.install(|| select::run(&a)),
        Command::Bonus(a) => pool.install(|| bonus::run(&a)),
        Command::Simulate(a) => pool.install(|| simulate::run(&a)),
        Command::Synth(a) => synth::run(&a),
        Command::Report(a) => report::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { output::EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("repexp: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
