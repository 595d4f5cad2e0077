//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matcha::attribution::{BaselineKind, DEFAULT_STEPS};
use matcha::training::ScheduleStrategy;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "matcha", version, about = "Contrastive semantic-matching metric for generated text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the GPT-2 BPE token ids of a text.
    Tokenize(TokenizeArgs),
    /// Train a model on a directory of JSONL datasets.
    Train(TrainArgs),
    /// Score a candidate against a reference.
    Score(ScoreArgs),
    /// Separation and human-agreement statistics for a scored corpus.
    Evaluate(EvaluateArgs),
    /// Integrated-Gradients token attributions of a score.
    Attribute(AttributeArgs),
    /// Write a templated synthetic triplet corpus as JSONL.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TokenizeArgs {
    /// GPT-2 vocabulary file ({token: id} JSON).
    #[arg(long)]
    pub vocab: PathBuf,
    /// GPT-2 merges file.
    #[arg(long)]
    pub merges: PathBuf,
    /// Truncation length.
    #[arg(long, default_value_t = 512)]
    pub max_len: usize,
    pub text: String,
}

/// Tokenizer files shared by the commands that read a checkpoint. Without
/// them the word vocabulary saved next to the checkpoint is used.
#[derive(Debug, Args, Serialize, Clone, Default)]
pub struct TokenizerArgs {
    /// GPT-2 vocabulary file; requires --merges.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// GPT-2 merges file; requires --vocab.
    #[arg(long)]
    pub merges: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON or TOML file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory, registry JSON or single JSONL file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training epochs [default: 15]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Micro-batch size [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Micro-batches per optimizer step [default: 8]
    #[arg(long)]
    pub grad_accum: Option<usize>,
    /// Adam learning rate [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay [default: 0.05]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Hinge margin m [default: 1.0]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Random seed [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset schedule: interleaved, sequential, curriculum,
    /// random_negative or contrastive_only [default: interleaved]
    #[arg(long)]
    pub schedule: Option<ScheduleStrategy>,
    /// Comma-separated dataset order for the curriculum schedule.
    #[arg(long, value_delimiter = ',')]
    pub curriculum: Option<Vec<String>>,
    /// Per-epoch learning-rate decay factor [default: 0.9]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Keep the embedding table fixed.
    #[arg(long)]
    pub freeze_embeddings: bool,
    /// Embedding width D [default: 768, or the width of --embedding]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of context blocks N_c [default: 16]
    #[arg(long)]
    pub contexts: Option<usize>,
    /// Truncation length in tokens [default: 512]
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Checkpoint-format file whose "embedding" tensor initializes the
    /// embedding table.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "ref")]
    pub reference: String,
    #[arg(long)]
    pub cand: String,
    /// Print a JSON object with provenance instead of the bare score.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Dataset directory, registry JSON or single JSONL file.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint whose scores are added as the "matcha" metric.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// External scores as {"id", "metric", "score", "role"?} JSONL; repeatable.
    #[arg(long)]
    pub scores: Vec<PathBuf>,
    /// Score range of an external metric as NAME=KIND with KIND one of
    /// cosine_like, unit, percent; repeatable.
    #[arg(long = "range", value_parser = parse_range)]
    pub ranges: Vec<(String, String)>,
    /// Comma-separated metrics to report [default: every scored metric]
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Rating scale MIN,MAX for datasets that do not declare one.
    #[arg(long, value_parser = parse_scale)]
    pub rating_scale: Option<(f64, f64)>,
    /// Report path [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Threshold curves as CSV.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Seed for dataset sample caps.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionArg {
    Both,
    TowardCandidate,
    TowardReference,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "ref")]
    pub reference: String,
    /// Candidate text; repeat for several candidates.
    #[arg(long, required = true)]
    pub cand: Vec<String>,
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    pub direction: DirectionArg,
    /// Riemann steps along the interpolation path.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    /// Baseline embeddings: zero or mean_embedding.
    #[arg(long, default_value = "zero")]
    pub baseline: BaselineKind,
    /// Report path [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tokenizer: TokenizerArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Number of triplets.
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Dataset name written into each record.
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> Result<(String, String), String> {
    let (name, kind) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=KIND, got {s:?}"))?;
    if name.is_empty() {
        return Err("metric name is empty".into());
    }
    Ok((name.to_string(), kind.to_string()))
}

fn parse_scale(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected MIN,MAX, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo < hi) {
        return Err(format!("MIN must be below MAX, got {lo},{hi}"));
    }
    Ok((lo, hi))
}
