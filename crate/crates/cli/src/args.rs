use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csm_core::fine::{Optimizer, TrainConfig};
use csm_core::rough::DeflationMode;

#[derive(Debug, Parser)]
#[command(name = "csm", version, about = "Concept selection models over embedding bundles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check one or more bundle directories.
    Validate(ValidateArgs),
    /// Write planted-concept synthetic bundles.
    Synth(SynthArgs),
    /// Per-concept activation statistics as CSV.
    Stats(StatsArgs),
    /// Greedy rough selection of a head set.
    Rough(RoughArgs),
    /// Mask training, core extraction and retraining into a model directory.
    Fine(FineArgs),
    /// Accuracy of a model, optionally with random and probe baselines.
    Eval(EvalArgs),
    /// Accuracy as a function of the core size.
    Sweep(SweepArgs),
    /// CSM against a linear probe on few labelled images per class.
    Fewshot(FewshotArgs),
    /// Top and bottom concepts of one test image as JSON.
    Explain(ExplainArgs),
    /// Zero-top-concept repair rate on misclassified images.
    DebugEval(DebugEvalArgs),
    /// HTTP debugging service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub bundles: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Receives concepts/, train/, test/ and planted.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 300)]
    pub concepts: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub informative: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// Second image set; adds Spearman and top-k overlap of the two variance profiles.
    #[arg(long)]
    pub other: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Output directory for variances.csv (and comparison.csv).
    #[arg(long)]
    pub out: PathBuf,
    /// Also export the activation matrix of --images as a bundle.
    #[arg(long)]
    pub activations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    LiteralCosine,
    ExactProjection,
}

impl From<ModeArg> for DeflationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::LiteralCosine => DeflationMode::LiteralCosine,
            ModeArg::ExactProjection => DeflationMode::ExactProjection,
        }
    }
}

#[derive(Debug, Args)]
pub struct RoughOpts {
    /// Head size; defaults to min(1000, library size).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum, default_value = "literal-cosine")]
    pub mode: ModeArg,
    /// L2-normalize images before selection.
    #[arg(long)]
    pub normalize_images: bool,
}

#[derive(Debug, Args)]
pub struct RoughArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[command(flatten)]
    pub rough: RoughOpts,
    /// Selection TSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Gd,
    Adam,
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Defaults to 0.1 for adam and 1.0 for gd.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Train on z-scored activations (the saved model stays on raw scale).
    #[arg(long)]
    pub standardize: bool,
}

impl TrainOpts {
    pub fn config(&self) -> TrainConfig {
        let base = match self.optimizer {
            OptimizerArg::Gd => TrainConfig::gd(),
            OptimizerArg::Adam => TrainConfig::default(),
        };
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            lambda: self.lambda,
            seed: self.seed,
            optimizer: match self.optimizer {
                OptimizerArg::Gd => Optimizer::Gd,
                OptimizerArg::Adam => Optimizer::Adam,
            },
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Args)]
pub struct FineArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    /// Selection TSV written by `rough`.
    #[arg(long)]
    pub selection: PathBuf,
    /// Core size; defaults to twice the class count.
    #[arg(long)]
    pub n_star: Option<usize>,
    #[command(flatten)]
    pub train_opts: TrainOpts,
    /// Model directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Training set, needed for the baselines.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Number of random-concept baselines (seeds 0..n).
    #[arg(long, default_value_t = 0)]
    pub random_seeds: u64,
    /// Add a linear probe on the raw embeddings.
    #[arg(long)]
    pub probe: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Core sizes to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_stars: Vec<usize>,
    #[command(flatten)]
    pub rough: RoughOpts,
    #[command(flatten)]
    pub train_opts: TrainOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Labelled images per class, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub shots: Vec<usize>,
    /// Sampling seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub n_star: Option<usize>,
    #[command(flatten)]
    pub rough: RoughOpts,
    #[command(flatten)]
    pub train_opts: TrainOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Image id; see also --row.
    #[arg(long, conflicts_with = "row", required_unless_present = "row")]
    pub id: Option<String>,
    /// Image row in the test bundle.
    #[arg(long)]
    pub row: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Intervention as POSITION=VALUE on the core concept at POSITION; repeatable.
    #[arg(long = "set", value_parser = parse_assignment)]
    pub set: Vec<(usize, f64)>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> Result<(usize, f64), String> {
    let (pos, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected POSITION=VALUE, got {s:?}"))?;
    let pos = pos.trim().parse().map_err(|e| format!("bad position: {e}"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad value: {e}"))?;
    if !value.is_finite() {
        return Err("value must be finite".into());
    }
    Ok((pos, value))
}

#[derive(Debug, Args)]
pub struct DebugEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Concept library the model was trained on (used to annotate --test).
    #[arg(long)]
    pub concepts: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Built UI assets, served under `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}
