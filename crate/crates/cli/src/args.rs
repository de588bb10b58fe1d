use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hnmc::data::SynthKind;
use hnmc::nn::{Activation, ModelKind};
use hnmc::train::{MetricKind, Optimizer};

#[derive(Parser, Debug)]
#[command(name = "hnmc", version, about = "Hidden neural Markov chain sequence taggers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per seed and write checkpoints plus a run manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Evaluate(EvaluateArgs),
    /// Append predicted labels to a CoNLL file.
    Predict(PredictArgs),
    /// Run the inference oracles and gradient checks.
    Verify(VerifyArgs),
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: hnmc::nn::NnError| e.to_string())
}

fn parse_synth(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: hnmc::data::DataError| e.to_string())
}

#[derive(ValueEnum, Clone, Copy, Debug, Default)]
pub enum MetricArg {
    #[default]
    Accuracy,
    SpanF1,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Accuracy => MetricKind::Accuracy,
            MetricArg::SpanF1 => MetricKind::SpanF1,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Default)]
pub enum OptimizerArg {
    #[default]
    Adam,
    Sgd,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Default)]
pub enum ActivationArg {
    #[default]
    Melu,
    Exp,
    Sigmoid,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Melu => Activation::Melu,
            ActivationArg::Exp => Activation::Exp,
            ActivationArg::Sigmoid => Activation::Sigmoid,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Dev,
    Test,
}

/// Where the text comes from and how tokens become vectors.
#[derive(Args, Debug)]
pub struct DataArgs {
    /// Training corpus in CoNLL column format.
    #[arg(long, conflicts_with = "synthetic")]
    pub train: Option<PathBuf>,
    /// Development corpus used to pick the best epoch.
    #[arg(long, requires = "train")]
    pub dev: Option<PathBuf>,
    /// Generate a synthetic corpus instead: hmm_sampled or lookahead.
    #[arg(long, value_parser = parse_synth)]
    pub synthetic: Option<SynthKind>,
    /// Training sequences of a synthetic corpus.
    #[arg(long, default_value_t = 500, requires = "synthetic")]
    pub train_size: usize,
    /// Development sequences of a synthetic corpus.
    #[arg(long, default_value_t = 200, requires = "synthetic")]
    pub dev_size: usize,
    /// Seed of the synthetic generator; defaults to --seed.
    #[arg(long, requires = "synthetic")]
    pub data_seed: Option<u64>,
    /// Word vectors in text format ("word v1 ... vD" per line).
    #[arg(long, conflicts_with_all = ["one_hot", "synthetic"])]
    pub embeddings: Option<PathBuf>,
    /// One-hot vectors over the training vocabulary.
    #[arg(long)]
    pub one_hot: bool,
    /// Lowercase tokens before looking them up.
    #[arg(long)]
    pub lowercase: bool,
    /// Column holding the token.
    #[arg(long, default_value_t = 0)]
    pub token_column: usize,
    /// Column holding the label; defaults to the last one.
    #[arg(long)]
    pub label_column: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// rnn, birnn, hnmc, hnmc2 or hnmc-cn.
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// 1: single layer; 2: layer plus dense head; 3: two stacked layers.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub arch: u8,
    /// Width of the first layer of architectures 2 and 3.
    #[arg(long, default_value_t = 32)]
    pub hidden_size: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Learning rate of architecture 1 [default: 0.005].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated per-layer learning rates of architectures 2 and 3 [default: 0.05,0.005].
    #[arg(long, value_delimiter = ',')]
    pub lr_layers: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t)]
    pub optimizer: OptimizerArg,
    /// Clip the joint gradient norm to this value.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Comma-separated hidden widths inside the entropic kernels (none by default).
    #[arg(long, value_delimiter = ',')]
    pub kernel_hidden: Vec<usize>,
    /// Positive last activation of the entropic kernels.
    #[arg(long, value_enum, default_value_t)]
    pub activation: ActivationArg,
    /// Dev metric used for model selection and reporting.
    #[arg(long, value_enum, default_value_t)]
    pub metric: MetricArg,
    /// Keep the training order fixed instead of reshuffling every epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// First seed; repeat k uses seed + k.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of independently seeded runs.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Directory for checkpoints, logs and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Do not print per-epoch progress.
    #[arg(long, short)]
    pub quiet: bool,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled CoNLL corpus to score.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Score on a synthetic corpus instead.
    #[arg(long, value_parser = parse_synth)]
    pub synthetic: Option<SynthKind>,
    #[arg(long, default_value_t = 0, requires = "synthetic")]
    pub data_seed: u64,
    #[arg(long, default_value_t = 200, requires = "synthetic")]
    pub size: usize,
    #[arg(long, value_enum, default_value = "dev", requires = "synthetic")]
    pub split: SplitArg,
    /// Metric; defaults to the one the model was selected with.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Replace the checkpoint's embedding file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub token_column: usize,
    #[arg(long)]
    pub label_column: Option<usize>,
    /// Also write a JSON manifest of this run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CoNLL file; its columns are copied to the output.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Replace the checkpoint's embedding file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub token_column: usize,
    /// Also write a JSON manifest of this run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultArg {
    /// Feed the EFB recursions observations rotated by one position.
    ShiftObservations,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Random models per inference check.
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,
    /// Base seed of the random models.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_states: usize,
    /// Longest sequence; enumeration is capped at 8.
    #[arg(long, default_value_t = 6)]
    pub max_length: usize,
    /// Corrupt the EFB inputs to confirm the checks can fail.
    #[arg(long, value_enum)]
    pub inject_fault: Option<FaultArg>,
    /// Also write a JSON manifest of this run.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}
