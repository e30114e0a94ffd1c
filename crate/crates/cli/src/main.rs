//! `cgn`: ingest, train, evaluate, cross-validate and explain.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cgn", version, about = "Line-graph CWE classifier and vulnerable-line highlighter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a labeled CSV corpus, balance it and write a stratified train/test split.
    Ingest(IngestArgs),
    /// Train a model file from a corpus.
    Train(TrainArgs),
    /// Evaluate a model file on a corpus.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Highlight the lines that drive a prediction.
    Explain(ExplainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BalanceArg {
    Downsample,
    Upsample,
    None,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for train.csv, test.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = BalanceArg::Downsample)]
    pub balance: BalanceArg,
    /// Per-class target count (default: min count when downsampling, max when upsampling).
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderArg {
    Hash,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Deeptree,
    Tree,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GcnModeArg {
    Fixed,
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Ansi,
    Html,
    Json,
}

/// Pipeline options shared by `train` and `crossval`.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long, value_enum, default_value_t = EmbedderArg::Hash)]
    pub embedder: EmbedderArg,
    /// Precomputed per-line embeddings (cgn-embed JSON lines); implies --embedder file.
    #[arg(long)]
    pub embed_file: Option<PathBuf>,
    /// Embedding dimension (hash embedder).
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Deeptree)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value_t = GcnModeArg::Trained)]
    pub gcn_mode: GcnModeArg,
    #[arg(long, default_value_t = 128)]
    pub gcn_out_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub gcn_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub gcn_lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub gcn_l2: f64,
    /// Propagate with A + I instead of the raw line-graph adjacency.
    #[arg(long)]
    pub self_loops: bool,
    /// Classifier epochs (DeepTree network or SGD baseline).
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Classifier learning rate (default 1e-3 for DeepTree, 1e-2 for SGD).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 12)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 2)]
    pub min_samples_leaf: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 32])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report path (default: <out stem>.report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Report JSON path; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Source file, or a corpus CSV when --id is given.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, value_enum, default_value_t = FormatArg::Ansi)]
    pub format: FormatArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub perturbations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub keep_prob: f64,
    /// Kernel width (default 0.25 * sqrt(lines)).
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<cgn_core::Error> for Failure {
    fn from(e: cgn_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Crossval(a) => commands::crossval(&a),
        Command::Explain(a) => commands::explain(&a),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
