use std::path::PathBuf;

use adaptest_core::engine::{ModelKind, PolicyKind};
use adaptest_core::evaluation::ReportFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adaptest", version, about = "Adaptive testing with learned question selection")]
pub struct Cli {
    /// Worker threads for data-parallel steps [default: 1].
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a response CSV, filter it and write the canonical form.
    Ingest(IngestArgs),
    /// Generate a synthetic 1PL dataset plus its ground truth.
    Synth(SynthArgs),
    /// Write the five student folds of a dataset.
    Folds(FoldsArgs),
    /// Train a response model and selection policy on one fold.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out students of a fold.
    Eval(EvalArgs),
    /// Question-level analyses over recorded selections.
    Analyze(AnalyzeArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Drop students with fewer responses.
    #[arg(long, default_value_t = adaptest_core::data::MIN_INTERACTIONS)]
    pub min_interactions: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub students: usize,
    #[arg(long)]
    pub questions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth JSON; defaults to `<output>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FoldsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Folds file from `folds`; otherwise folds are derived from the seed.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long)]
    pub model: Option<ModelArg>,
    #[arg(long)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub question_lr: Option<f64>,
    #[arg(long)]
    pub policy_lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub policy_hidden: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines epoch log; defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON evaluation config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<usize>,
    /// Comma-separated test lengths, e.g. `1,3,5,10`.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split: Option<SplitArg>,
    /// Evaluate the checkpoint's model under a different selection policy.
    #[arg(long)]
    pub policy: Option<PolicyArg>,
    /// Label for the method column; defaults to `<model>-<policy>`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub report: PathBuf,
    /// Report format; inferred from the report extension when omitted.
    #[arg(long)]
    pub format: Option<FormatArg>,
    /// Write the per-student selections here (input to `analyze`).
    #[arg(long)]
    pub selections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub kind: AnalysisKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Selections files written by `eval`; `mi` accepts several.
    #[arg(long, required = true)]
    pub selections: Vec<PathBuf>,
    /// Test length for exposure; defaults to the selection length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    pub n_list: Vec<usize>,
    /// Prior weight of the MAP ability estimates.
    #[arg(long, default_value_t = 1.0)]
    pub map_lambda: f64,
    /// Penalty of the full-data 1PL fit that supplies difficulties.
    #[arg(long, default_value_t = 1e-3)]
    pub fit_lambda: f64,
    /// Seed for sampling overlap pairs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON service config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    #[arg(long)]
    pub answer_log: Option<PathBuf>,
    #[arg(long)]
    pub session_ttl_secs: Option<u64>,
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub map_lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Biirt,
    Binn,
    Irt,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Biirt => ModelKind::Biirt,
            ModelArg::Binn => ModelKind::Binn,
            ModelArg::Irt => ModelKind::Irt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Random,
    Active,
    Unbiased,
    Approx,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Random => PolicyKind::Random,
            PolicyArg::Active => PolicyKind::Active,
            PolicyArg::Unbiased => PolicyKind::Unbiased,
            PolicyArg::Approx => PolicyKind::Approx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Test,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Mi,
    Exposure,
    Ability,
}
