mod args;
mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use thermoseg::synth::SceneMode;

use args::ConfigArgs;

#[derive(Parser, Debug)]
#[command(name = "thermoseg", version, about = "Online self-supervised water segmentation for thermal video")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize raw frames and write 8-bit previews.
    Preprocess(PreprocessCmd),
    /// Write texture and motion water-probability maps.
    Cues(CuesCmd),
    /// Render a synthetic near-shore sequence with ground truth.
    Synth(SynthCmd),
    /// Train initial weights on annotated or synthetic frames.
    Pretrain(PretrainCmd),
    /// Stream a sequence through the online pipeline.
    Run(RunCmd),
    /// Score the cue/override ablation grid.
    Eval(EvalCmd),
    /// Measure stage latencies with the trainer idle and active.
    Bench(BenchCmd),
}

/// Size and length of generated scenes.
#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
}

#[derive(Args, Debug)]
pub struct PreprocessCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CuesCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct SynthCmd {
    #[arg(long, default_value = "river")]
    pub mode: SceneMode,
    #[arg(long, env = thermoseg::SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SynthArgs,
}

#[derive(Args, Debug)]
pub struct PretrainCmd {
    /// Sequence directory with annotations; repeatable.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Also train on generated scenes of these modes.
    #[arg(long, value_delimiter = ',')]
    pub synth: Vec<SceneMode>,
    /// Generated scenes per mode.
    #[arg(long, default_value_t = 2)]
    pub scenes: usize,
    #[command(flatten)]
    pub scene: SynthArgs,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 256)]
    pub crop: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, env = thermoseg::SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Start from these weights instead of a fresh network.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Keep polling the frame directory for new frames.
    #[arg(long)]
    pub watch: bool,
    #[arg(long, default_value_t = 100)]
    pub poll_ms: u64,
    /// Stop watching after this long without a new frame.
    #[arg(long, default_value_t = 5000)]
    pub idle_timeout_ms: u64,
    /// Single-threaded reference loop.
    #[arg(long)]
    pub sequential: bool,
    /// Let inference use the newest weights instead of waiting for
    /// scheduled training cycles.
    #[arg(long)]
    pub live: bool,
    /// Inference only, no adaptation.
    #[arg(long)]
    pub no_train: bool,
    /// Feed rate limit in frames per second.
    #[arg(long)]
    pub pace: Option<f64>,
    /// Also write overlay images.
    #[arg(long)]
    pub overlay: bool,
    /// Per-frame sky masks to use instead of the built-in heuristic.
    #[arg(long)]
    pub sky_masks: Option<PathBuf>,
    /// Diagnostics CSV path (default OUT/diagnostics.csv).
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Annotated sequence as DIR or NAME=DIR; repeatable.
    #[arg(long)]
    pub sequence: Vec<String>,
    /// Generated sequences of these modes.
    #[arg(long, value_delimiter = ',')]
    pub synth: Vec<SceneMode>,
    #[command(flatten)]
    pub scene: SynthArgs,
    /// Offset added to the seed for generated sequences.
    #[arg(long, default_value_t = 500)]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 10)]
    pub annotate_first: usize,
    #[arg(long, default_value_t = 10)]
    pub annotate_every: usize,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Per-frame scores as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct BenchCmd {
    /// Sequence directory; a generated scene is used when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "river")]
    pub mode: SceneMode,
    #[command(flatten)]
    pub scene: SynthArgs,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub pace: Option<f64>,
    /// Training interval while the trainer is active.
    #[arg(long, default_value_t = 10)]
    pub bench_train_interval: u64,
    #[arg(long)]
    pub no_trainer: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_millis().init();
    match &cli.cmd {
        Command::Preprocess(c) => commands::preprocess(c),
        Command::Cues(c) => commands::cues(c),
        Command::Synth(c) => commands::synth(c),
        Command::Pretrain(c) => commands::pretrain_cmd(c),
        Command::Run(c) => commands::run(c),
        Command::Eval(c) => commands::eval(c),
        Command::Bench(c) => commands::bench_cmd(c),
    }
}
