use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dsnerf", version, about = "Train, render and evaluate dual-space avatar fields")]
pub struct Cli {
    /// Worker threads for all parallel stages.
    #[arg(long, global = true, env = "DSNERF_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-view dataset.
    Gen(GenArgs),
    /// Fit the fields to a dataset.
    Train(TrainCmdArgs),
    /// Render images from a checkpoint.
    Render(RenderArgs),
    /// Score rendered images against ground truth.
    Eval(EvalArgs),
    /// Train and compare ablation variants.
    Ablate(AblateArgs),
    /// Time nearest-face queries and rendering.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene description (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Image width and height in pixels; the focal length scales along.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of training frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Number of training cameras.
    #[arg(long)]
    pub cameras: Option<usize>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small networks sized for one CPU core.
    Desk,
    /// The full-width architecture.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LightingArg {
    Scalar,
    Off,
    Color,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MappingArg {
    Barycentric,
    InverseLbs,
}

/// Training settings shared by `train` and `ablate`.
#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Training configuration (JSON) applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total iterations (overrides epochs).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rays per batch.
    #[arg(long)]
    pub rays: Option<usize>,
    /// Samples per ray.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Hidden width of the body network.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, value_enum)]
    pub lighting: Option<LightingArg>,
    #[arg(long, value_enum)]
    pub mapping: Option<MappingArg>,
    /// Neighbours blended by the inverse-skinning mapping.
    #[arg(long, default_value_t = 4)]
    pub knn: usize,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Gradient shards per batch.
    #[arg(long)]
    pub shards: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Disable jitter and fix the shard count so results do not depend on threads.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainCmdArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Run directory for checkpoints, log and resolved config.
    #[arg(long)]
    pub run: PathBuf,
    /// Continue from the latest checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint file.
    #[arg(long, conflicts_with = "run", required_unless_present = "run")]
    pub checkpoint: Option<PathBuf>,
    /// Run directory; its latest checkpoint is used.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset frames to render (default: all).
    #[arg(long, value_delimiter = ',')]
    pub frame: Vec<usize>,
    /// Cameras to render (default: all).
    #[arg(long, value_delimiter = ',')]
    pub camera: Vec<usize>,
    /// Render the poses of this file (poses.json schema) instead of dataset frames.
    #[arg(long, conflicts_with = "frame")]
    pub pose_file: Option<PathBuf>,
    /// Use a zero latent code for every frame.
    #[arg(long)]
    pub zero_latent: bool,
    /// Samples per ray (default: the training value).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    /// Accepted for symmetry with `train`; rendering never jitters.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    NovelView,
    NovelPose,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of predictions named like the dataset frames.
    #[arg(long, required_unless_present = "self_check")]
    pub pred: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a prediction / truth / difference grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Validate the dataset layout and files.
    #[arg(long)]
    pub self_check: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    InverseLbs,
    NoLighting,
    LightingColor,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory for runs and the comparison.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Variant::Full, Variant::InverseLbs, Variant::NoLighting, Variant::LightingColor])]
    pub variants: Vec<Variant>,
    /// Samples per ray at evaluation.
    #[arg(long, default_value_t = 32)]
    pub eval_samples: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Approximate face counts of the benchmark meshes.
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 5000, 20000])]
    pub faces: Vec<usize>,
    /// Queries per mesh.
    #[arg(long, default_value_t = 20000)]
    pub queries: usize,
    /// Timed repetitions; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Image size of the render benchmark.
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
