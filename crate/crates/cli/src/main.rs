mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error in how the tool was invoked or in its inputs; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "umd2", version, about = "Unsupervised multi-modal misinformation detection")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every module; falls back to the config, then UMD2_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pre-train the source encoder (needs --credibility).
    PretrainSource(PretrainArgs),
    /// Pre-train the text encoder.
    PretrainText(PretrainArgs),
    /// Pre-train the propagation encoder.
    PretrainProp(PretrainArgs),
    /// Pre-train the user encoder (needs --profiles).
    PretrainUser(PretrainArgs),
    /// Train the fusion model on four embedding tables.
    TrainUmd2(TrainArgs),
    /// Cluster records; an all-ones mask uses the teacher, any other the student.
    Predict(PredictArgs),
    /// Score a prediction CSV against gold labels.
    Eval(EvalArgs),
    /// Label clusters from an oracle file and write labelled predictions.
    Kshot(KshotArgs),
    /// Build records from an offline tweet dump and article store.
    BuildDataset(BuildArgs),
    /// Write a synthetic dataset with gold labels.
    Synth(SynthArgs),
    /// Dataset statistics as JSON.
    Stats(StatsArgs),
    /// Project embeddings to a few principal components for plotting.
    Project(ProjectArgs),
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Records JSONL.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Output directory for embeddings.emb (+ .ids) and the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Credibility CSV (source encoder).
    #[arg(long)]
    pub credibility: Option<PathBuf>,
    /// User profiles JSONL (user encoder).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Lexicon directory (text encoder); the built-in lists by default.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Four embedding tables in source, text, propagation, user order; `-`
/// marks an absent modality.
#[derive(Args, Debug)]
pub struct EmbeddingArgs {
    #[arg(long, num_args = 4, value_names = ["SOURCE", "TEXT", "PROP", "USER"], required = true)]
    pub embeddings: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Output model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Modality weights `s,t,p,u`.
    #[arg(long, default_value = "1,1,1,1")]
    pub mask: String,
    /// Prediction CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum AveragingArg {
    Binary,
    Macro,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction CSV.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold CSV (`record_id,label`).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "binary")]
    pub averaging: AveragingArg,
    /// Dataset name written into the report.
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    /// Metrics JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KshotArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub emb: EmbeddingArgs,
    /// Cluster count the model was trained with.
    #[arg(long)]
    pub k: usize,
    /// CSV `cluster,label` with one line per queried cluster.
    #[arg(long)]
    pub oracle_file: PathBuf,
    /// Labelled prediction CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Tweet dump JSONL.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Article store JSONL.
    #[arg(long)]
    pub articles: Option<PathBuf>,
    /// Harvest configuration JSON; overrides the `harvest` config section.
    #[arg(long)]
    pub harvest: Option<PathBuf>,
    /// Records JSONL; the stage report goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub fake_fraction: Option<f64>,
    #[arg(long)]
    pub n_domains: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Credibility CSV; enables weak labels and the temporal histogram.
    #[arg(long)]
    pub credibility: Option<PathBuf>,
    /// Histogram bin width in days.
    #[arg(long, default_value_t = 1)]
    pub bin_days: u64,
    /// Temporal histogram CSV.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Statistics JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    /// One embedding table to project.
    #[arg(long, conflicts_with = "model")]
    pub input: Option<PathBuf>,
    /// Project the teacher's fused representations instead (with --embeddings).
    #[arg(long, requires = "embeddings")]
    pub model: Option<PathBuf>,
    #[arg(long, num_args = 4, value_names = ["SOURCE", "TEXT", "PROP", "USER"])]
    pub embeddings: Option<Vec<String>>,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
    /// Coordinates CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use umd2_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::Io { .. }
            | E::Parse { .. }
            | E::Validation(_)
            | E::Dimension(_)
            | E::InvalidMask(_)
            | E::Config(_)
            | E::MissingEmbedding(_)
            | E::MissingModality(_)
            | E::BatchSize(_),
        ) => 2,
        _ => 1,
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
