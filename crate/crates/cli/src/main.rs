//! `concf`: prepare splits, train single-objective or consensus models,
//! evaluate checkpoints and analyze complementarity.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CONCF_OUTPUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "concf", version, about = "One-class collaborative filtering with multi-objective consensus learning")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split an interaction file and write a split manifest.
    Prepare(PrepareArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Ranking metrics of a checkpoint, per head and for the consensus.
    Evaluate(EvaluateArgs),
    /// Complementarity of a family of models: PER matrix, CHR table, CDFs.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// `user<sep>item` file; extra columns are ignored.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a planted low-rank dataset instead of reading a file.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value = "auto")]
    pub delimiter: String,
    /// Output directory [default: $CONCF_OUTPUT_DIR or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train/validation/test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub ratios: String,
    /// Users with fewer interactions stay entirely in train.
    #[arg(long, default_value_t = 10)]
    pub min_user: usize,
    /// Items with fewer interactions stay entirely in train.
    #[arg(long, default_value_t = 10)]
    pub min_item: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Split manifest written by `prepare`.
    #[arg(long)]
    pub split: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seeds, e.g. `1,2,3` or `1..5` (inclusive). Defaults to the config seed.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory [default: $CONCF_OUTPUT_DIR or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save resumable trainer state after every epoch under `<run>/state`.
    #[arg(long)]
    pub save_state: bool,
    /// Continue from `<run>/state` where it exists.
    #[arg(long)]
    pub resume: bool,
    /// Print one line per epoch.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub split: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Snapshot queue dump; required for consensus metrics.
    #[arg(long)]
    pub queue: Option<PathBuf>,
    /// Report consensus metrics (needs `--queue`).
    #[arg(long)]
    pub consensus: bool,
    /// Configuration of the run, for the consensus settings. Defaults to
    /// `config.txt` next to the checkpoint when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Cutoffs.
    #[arg(long, default_value = "20,50")]
    pub ns: String,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Which held-out part to score.
    #[arg(long, value_enum, default_value_t = Part::Test)]
    pub on: Part,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write the consensus lists as CSV.
    #[arg(long)]
    pub export_consensus: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub split: PathBuf,
    /// Family member, `PATH` (every head of the checkpoint) or `PATH:HEAD`;
    /// repeatable.
    #[arg(long = "model", required = true, value_name = "PATH[:HEAD]")]
    pub models: Vec<String>,
    /// Top-K cutoff of the hit sets.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    /// Output directory [default: $CONCF_OUTPUT_DIR or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `--out`, else `$CONCF_OUTPUT_DIR`, else the working directory.
pub fn output_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Prepare(a) => commands::prepare::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Evaluate(a) => commands::evaluate::run(&a),
        Command::Analyze(a) => commands::analyze::run(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
