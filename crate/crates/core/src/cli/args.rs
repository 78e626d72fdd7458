use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use support_adapt::harness::Shots;
use support_adapt::store::Split;
use support_adapt::Variant;

/// Few-shot audio classification over frozen embeddings: zero-shot class
/// weights, a key-value support set, and an optional residual adapter.
#[derive(Debug, Parser)]
#[command(name = "support-adapt", version, about, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an embedding file and print record counts per split.
    Validate(ValidateArgs),
    /// Zero-shot accuracy from class weights alone.
    ZeroShot(ZeroShotArgs),
    /// Train an adapter on a k-shot support set and save it.
    Train(TrainArgs),
    /// Accuracy of one variant at fixed alpha and beta.
    Eval(EvalArgs),
    /// Validation accuracy over the whole alpha x beta grid for one run.
    Sweep(SweepArgs),
    /// k-shot curves: every dataset x variant x shots x seed, grid-searched.
    Fewshot(ExperimentArgs),
    /// Joint vs independent adapter training over datasets sharing labels.
    Joint(ExperimentArgs),
    /// Training time, inference time and trainable parameters per variant.
    Bench(ExperimentArgs),
    /// Write a synthetic domain-shift dataset and its class weights.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Embedding dataset (EMB1).
    pub file: PathBuf,
    /// Also check these class weights against the dataset.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Embedding dataset (EMB1).
    #[arg(long)]
    pub data: PathBuf,
    /// Class weights (EMB1, one unit-norm row per class).
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Logit scale applied to cosine similarities.
    #[arg(long, default_value_t = support_adapt::clap_head::DEFAULT_SCALE)]
    pub scale: f64,
    /// Split to score.
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// Write the result as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeadArgs {
    #[arg(long, default_value_t = Variant::ClapS)]
    pub variant: Variant,
    /// Interpolation weight of the second head. Variants with a single
    /// head pin it (clap-s to 1; zs-clap and adapter to 0).
    #[arg(long, default_value_t = support_adapt::predictor::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Support-head sharpness.
    #[arg(long, default_value_t = support_adapt::support::DEFAULT_BETA)]
    pub beta: f64,
    /// Logit scale applied to cosine similarities.
    #[arg(long, default_value_t = support_adapt::clap_head::DEFAULT_SCALE)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct SupportArgs {
    /// Shots per class sampled from the train split, or "full".
    #[arg(long, default_value_t = Shots::K(8))]
    pub shots: Shots,
    /// Seed for support sampling and adapter training.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// Adapter hidden width [default: embedding width / 4]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Residual ratio r of the adapter; 0 is a pass-through.
    #[arg(long, default_value_t = support_adapt::adapter::DEFAULT_RESIDUAL_RATIO)]
    pub residual: f64,
    /// AdamW learning rate.
    #[arg(long, default_value_t = support_adapt::TrainConfig::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = support_adapt::TrainConfig::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long, default_value_t = support_adapt::TrainConfig::DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// AdamW decoupled weight decay.
    #[arg(long, default_value_t = support_adapt::TrainConfig::DEFAULT_WEIGHT_DECAY)]
    pub weight_decay: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[command(flatten)]
    pub support: SupportArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Adapter checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[command(flatten)]
    pub support: SupportArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Trained adapter checkpoint; without it adapter variants train one first.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Split to score.
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
    /// Write the result as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[command(flatten)]
    pub support: SupportArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Write the grid as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    pub alpha_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2.5,5.5,7,10")]
    pub beta_grid: Vec<f64>,
}

/// Flags shared by the experiment commands. Each flag overrides the
/// matching field of `--config`; unset flags fall back to the config, then
/// to the built-in default shown here.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment spec (same field names as the flags).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding dataset; repeat for several, paired in order with --weights.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Class weights, one per --data.
    #[arg(long)]
    pub weights: Vec<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "zs-clap,clap-s,tip-adapter,tip-adapter-f,adapter,adapter-zs,adapter-support,clap-s-plus"
    )]
    pub variant: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,24,full")]
    pub shots: Vec<Shots>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seed: Vec<u64>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Alpha used while training adapters.
    #[arg(long, default_value_t = support_adapt::predictor::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Beta used while training adapters.
    #[arg(long, default_value_t = support_adapt::support::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = support_adapt::clap_head::DEFAULT_SCALE)]
    pub scale: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Per-seed results CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Train records per class; val and test get 1/7 and 2/7 of that.
    #[arg(long, default_value_t = 70)]
    pub shots_available: usize,
    /// 0 keeps audio aligned with the class weights, 1 rotates it out of reach.
    #[arg(long, default_value_t = 0.5)]
    pub shift: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset file to write.
    #[arg(long, default_value = "synthetic.emb")]
    pub out: PathBuf,
    /// Class-weight file to write.
    #[arg(long, default_value = "synthetic_weights.emb")]
    pub weights_out: PathBuf,
}
