//! `mvfuse`: synthetic data, appearance caches, the two training stages,
//! multi-view evaluation and cost tables.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod run;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mvfuse", version, about = "Appearance + motion-vector late fusion for video action recognition")]
struct Cli {
    /// Cap on worker threads for data loading and kernels.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion-vector + RGB dataset.
    Synth(SynthArgs),
    /// Pre-compute appearance features for one or more splits.
    PrecomputeClip(PrecomputeArgs),
    /// Train the MV-only classifier (backbone + linear head).
    TrainMv(TrainMvArgs),
    /// Train the fusion head on frozen appearance and motion features.
    TrainFusion(TrainFusionArgs),
    /// Evaluate clip-only, MV-only or fusion under the multi-view protocol.
    Eval(EvalArgs),
    /// Ablation table and qualitative report from three eval directories.
    Report(ReportArgs),
    /// Inference cost table.
    Flops(FlopsArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    per_class: usize,
    #[arg(long, default_value_t = 8)]
    test_per_class: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Frame height and width in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Classes defined by appearance XOR motion.
    #[arg(long)]
    xor: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset root; falls back to the config file, then MVFUSE_DATA_ROOT.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncoderChoice {
    /// Orthonormal palette mock on synthetic data, random projection otherwise.
    Mock,
    /// CLIP ViT-B/32 from converted weights.
    Pretrained,
}

#[derive(Args, Clone)]
struct EncoderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    encoder: EncoderChoice,
    /// safetensors file with OpenAI CLIP weights (pretrained encoder).
    #[arg(long)]
    clip_weights: Option<PathBuf>,
    /// BPE merges file (`bpe_simple_vocab_16e6.txt[.gz]`).
    #[arg(long)]
    clip_vocab: Option<PathBuf>,
}

#[derive(Args)]
struct PrecomputeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Comma-separated splits; each gets `appearance-<split>.mclf`.
    #[arg(long, value_delimiter = ',', default_value = "train,test")]
    splits: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Flags that override `[train]` entries of the config file.
#[derive(Args, Clone, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Comma-separated lr decay epochs; pass an empty string for none.
    #[arg(long)]
    lr_milestones: Option<String>,
}

#[derive(Args)]
struct TrainMvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainOverrides,
    /// Split used to pick the best epoch; none keeps the last epoch.
    #[arg(long)]
    val_split: Option<String>,
    /// torchvision EfficientNet-B0 `features.*` weights (safetensors).
    #[arg(long)]
    imagenet_weights: Option<PathBuf>,
    #[arg(long)]
    stochastic_depth: Option<f32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFusionArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainOverrides,
    /// MV-only checkpoint providing the frozen motion backbone.
    #[arg(long)]
    mv_checkpoint: PathBuf,
    /// Appearance cache of the training split.
    #[arg(long)]
    appearance_cache: PathBuf,
    /// Pre-compute centre-view motion features once instead of augmenting.
    #[arg(long)]
    cache_motion: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    ClipOnly,
    MvOnly,
    Fusion,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AveragingChoice {
    Probabilities,
    Logits,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: EvalMode,
    #[arg(long, default_value = "test")]
    split: String,
    /// Temporal views (centre crops) per video.
    #[arg(long, default_value_t = 32)]
    views: usize,
    /// Defaults to the crop size the MV model was trained at.
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long, value_enum, default_value = "probabilities")]
    averaging: AveragingChoice,
    #[arg(long)]
    mv_checkpoint: Option<PathBuf>,
    #[arg(long)]
    fusion_checkpoint: Option<PathBuf>,
    /// Appearance cache of the evaluated split (clip-only and fusion).
    #[arg(long)]
    appearance_cache: Option<PathBuf>,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Prompt templates, one per line with `{}` for the class name.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Also time this many videos at batch size 1.
    #[arg(long)]
    throughput_videos: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    clip_only: PathBuf,
    #[arg(long)]
    mv_only: PathBuf,
    #[arg(long)]
    fusion: PathBuf,
    /// Videos listed in the qualitative report.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlopsArgs {
    /// TOML ledger file; the built-in table is used without it.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// `macs` or `two-ops-per-mac`; overrides the ledger file.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value_t = 101)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    views: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        #[cfg(feature = "parallel")]
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::PrecomputeClip(a) => commands::precompute_clip(a),
        Command::TrainMv(a) => commands::train_mv(a),
        Command::TrainFusion(a) => commands::train_fusion(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Flops(a) => commands::flops(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<run::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
