use crate::run::{data_root, train_config, usage, ConfigFile, RunDir};
use crate::{
    AveragingChoice, EncoderArgs, EncoderChoice, EvalArgs, EvalMode, FlopsArgs, PrecomputeArgs, ReportArgs, SynthArgs,
    TrainFusionArgs, TrainMvArgs,
};
use anyhow::{Context, Result};
use mvfuse_core::appearance::clip::ClipEncoder;
use mvfuse_core::appearance::library::read_templates;
use mvfuse_core::appearance::mock::{OrthonormalMockEncoder, RandomProjectionEncoder};
use mvfuse_core::appearance::{
    build_text_library, default_templates, encode_appearance, precompute_cache, zero_shot_classify, EncoderClient,
    FrameSource,
};
use mvfuse_core::config::{Stage, TrainConfig};
use mvfuse_core::cost_accounting::{builtin_ledgers, parse_ledger_file, render_flops_table, CountingPolicy};
use mvfuse_core::dataset_io::synth::{generate_synthetic_dataset, palette_color, read_dataset_info, SynthConfig};
use mvfuse_core::dataset_io::{read_feature_cache, DatasetLayout, FeatureCache, FeatureKind, SplitManifest};
use mvfuse_core::evaluator::{
    ablation_table, multiview_predict, predict_split, predict_zero_shot, qualitative_report, read_predictions_jsonl,
    throughput_benchmark, write_predictions_jsonl, AblationEntry, Averaging, EvalOptions, EvalResult, Predictor,
    Throughput,
};
use mvfuse_core::fusion::{
    load_fusion_checkpoint, motion_feature_records, save_fusion_checkpoint, train_fusion_head, FileRef, FrozenInputs,
    FusionCheckpointMeta, FusionHead, FUSED_LAYOUT,
};
use mvfuse_core::motion::{
    count_trainable_params, load_mv_checkpoint, save_mv_checkpoint, train_mv_classifier, MotionModel, MvCheckpointMeta,
};
use mvfuse_core::temporal_sampler::ViewProtocol;
use mvfuse_nn::efficientnet::EfficientNetConfig;
use mvfuse_nn::loss::softmax;
use mvfuse_nn::Parameterized;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn list_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            list_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        test_per_class: a.test_per_class,
        frames: a.frames,
        height: a.size,
        width: a.size,
        xor: a.xor,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let ds = generate_synthetic_dataset(&cfg)?;
    let mut run = RunDir::create(&a.out, "synth")?;
    ds.write(&a.out)?;
    let mut files = Vec::new();
    list_files(&a.out, &mut files)?;
    for f in files.into_iter().filter(|f| !f.ends_with("outputs.json") && !f.ends_with("resolved_config.toml")) {
        run.produced(f);
    }
    run.write_resolved(&cfg)?;
    println!("wrote {} train and {} test videos to {}", ds.train.len(), ds.test.len(), a.out.display());
    run.finish()
}

fn build_encoder(args: &EncoderArgs, root: &Path) -> Result<Box<dyn EncoderClient>> {
    Ok(match args.encoder {
        EncoderChoice::Mock => match read_dataset_info(root)? {
            Some(info) => {
                let names = DatasetLayout::new(root).class_names()?;
                let palette = (0..info.config.classes).map(palette_color).collect();
                Box::new(OrthonormalMockEncoder::new(&names, palette)?)
            }
            None => Box::new(RandomProjectionEncoder::new(0)),
        },
        EncoderChoice::Pretrained => {
            let (Some(w), Some(v)) = (&args.clip_weights, &args.clip_vocab) else {
                return Err(usage("--encoder pretrained needs --clip-weights and --clip-vocab"));
            };
            Box::new(ClipEncoder::load(w, v)?)
        }
    })
}

#[derive(Serialize)]
struct PrecomputeResolved {
    data_root: PathBuf,
    encoder: String,
    splits: Vec<String>,
}

pub fn precompute_clip(a: PrecomputeArgs) -> Result<()> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let root = data_root(&a.data, &file)?;
    let layout = DatasetLayout::new(&root);
    let encoder = build_encoder(&a.encoder, &root)?;
    let mut run = RunDir::create(&a.out, "precompute-clip")?;
    run.write_resolved(&PrecomputeResolved {
        data_root: root.clone(),
        encoder: encoder.name(),
        splits: a.splits.clone(),
    })?;
    for split in &a.splits {
        let manifest = layout.manifest(split, None)?;
        let path = run.path(&format!("appearance-{split}.mclf"));
        let cache = precompute_cache(&manifest, &layout, encoder.as_ref(), &path)?;
        run.produced(path.clone());
        println!("{split}: {} features -> {}", cache.len(), path.display());
    }
    run.finish()
}

#[derive(Serialize)]
struct TrainMvResolved<'a> {
    data_root: &'a Path,
    val_split: Option<&'a str>,
    imagenet_weights: Option<&'a Path>,
    backbone: &'a EfficientNetConfig,
    train: &'a TrainConfig,
}

pub fn train_mv(a: TrainMvArgs) -> Result<()> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let root = data_root(&a.data, &file)?;
    let cfg = train_config(Stage::MvOnly, &file, &a.train)?;
    let layout = DatasetLayout::new(&root);
    let class_names = layout.class_names()?;
    let train = layout.manifest("train", None)?;
    let val = a.val_split.as_deref().map(|s| layout.manifest(s, None)).transpose()?;

    let mut backbone = EfficientNetConfig::b0(2);
    if let Some(sd) = a.stochastic_depth {
        if !(0.0..1.0).contains(&sd) {
            return Err(usage("--stochastic-depth must be in [0, 1)"));
        }
        backbone.stochastic_depth = sd;
    }
    let mut model =
        MotionModel::with_config(backbone.clone(), class_names.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    if let Some(w) = &a.imagenet_weights {
        let bytes = std::fs::read(w).with_context(|| format!("reading {}", w.display()))?;
        let (tensors, _) = mvfuse_nn::state::from_bytes(&bytes)?;
        model.load_imagenet_backbone(&tensors)?;
    }

    let mut run = RunDir::create(&a.out, "train-mv")?;
    run.write_resolved(&TrainMvResolved {
        data_root: &root,
        val_split: a.val_split.as_deref(),
        imagenet_weights: a.imagenet_weights.as_deref(),
        backbone: &backbone,
        train: &cfg,
    })?;
    let out = train_mv_classifier(model, &train, val.as_ref(), &layout, &cfg)?;
    let meta = MvCheckpointMeta {
        class_names,
        backbone,
        train: cfg,
        epoch: out.best_epoch,
        best_metric: out.best_metric,
        metric_name: out.metric_name.clone(),
    };
    let ckpt = run.path("mv.ckpt");
    save_mv_checkpoint(&ckpt, &out.model, &meta)?;
    run.produced(ckpt);
    run.write_json("history.json", &out.history)?;
    println!("best epoch {} {} {:.4} after {} steps", out.best_epoch, out.metric_name, out.best_metric, out.steps);
    println!("trainable params: {}", count_trainable_params(&out.model));
    run.finish()
}

#[derive(Serialize)]
struct TrainFusionResolved<'a> {
    data_root: &'a Path,
    mv_checkpoint: &'a FileRef,
    appearance_cache: &'a FileRef,
    cache_motion: bool,
    train: &'a TrainConfig,
}

pub fn train_fusion(a: TrainFusionArgs) -> Result<()> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let root = data_root(&a.data, &file)?;
    let (mut motion, mv_meta) =
        load_mv_checkpoint(&a.mv_checkpoint).with_context(|| format!("loading {}", a.mv_checkpoint.display()))?;
    let mut flags = a.train.clone();
    if flags.crop_size.is_none() && !file.train.contains_key("crop_size") {
        flags.crop_size = Some(mv_meta.train.crop_size);
    }
    let cfg = train_config(Stage::Fusion, &file, &flags)?;
    let layout = DatasetLayout::new(&root);
    let class_names = layout.class_names()?;
    if class_names != mv_meta.class_names {
        anyhow::bail!("the MV checkpoint was trained on different classes than {}", root.display());
    }
    let train = layout.manifest("train", None)?;
    let appearance = read_feature_cache(&a.appearance_cache)?;
    motion.set_backbone_frozen(true);

    let mv_ref = FileRef::of(&std::fs::canonicalize(&a.mv_checkpoint)?)?;
    let app_ref = FileRef::of(&std::fs::canonicalize(&a.appearance_cache)?)?;
    let mut run = RunDir::create(&a.out, "train-fusion")?;
    run.write_resolved(&TrainFusionResolved {
        data_root: &root,
        mv_checkpoint: &mv_ref,
        appearance_cache: &app_ref,
        cache_motion: a.cache_motion,
        train: &cfg,
    })?;

    let motion_cache = if a.cache_motion {
        let records = motion_feature_records(&motion, &train, &layout, cfg.segments, cfg.crop_size)?;
        Some(FeatureCache::new(FeatureKind::Motion, records)?)
    } else {
        None
    };
    let head = FusionHead::new(class_names.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let inputs =
        FrozenInputs { appearance: &appearance, motion: &motion, source: &layout, motion_cache: motion_cache.as_ref() };
    let out = train_fusion_head(head, &inputs, &train, &cfg)?;
    let meta = FusionCheckpointMeta {
        class_names,
        layout: FUSED_LAYOUT.into(),
        train: cfg,
        epochs_run: out.history.len(),
        appearance_cache: Some(app_ref),
        mv_checkpoint: Some(mv_ref),
        appearance_digest: out.appearance_digest.clone(),
        motion_checksum: format!("{:016x}", out.motion_checksum),
    };
    let ckpt = run.path("fusion.ckpt");
    save_fusion_checkpoint(&ckpt, &out.head, &meta)?;
    run.produced(ckpt);
    run.write_json("history.json", &out.history)?;
    if let Some(last) = out.history.last() {
        println!("final epoch {}: loss {:.4} train top1 {:.4}", last.epoch, last.mean_loss, last.train_top1);
    }
    println!("frozen MV model checksum {} unchanged", meta.motion_checksum);
    println!("trainable params: {}", count_trainable_params(&out.head));
    run.finish()
}

/// `summary.json` of an eval run.
#[derive(Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: String,
    pub split: String,
    pub views: usize,
    pub crop_size: Option<usize>,
    pub averaging: Averaging,
    pub videos: usize,
    pub top1: f64,
    pub trainable_params: usize,
    pub class_names: Vec<String>,
    pub throughput: Option<Throughput>,
}

#[derive(Serialize)]
struct EvalResolved<'a> {
    data_root: &'a Path,
    mode: &'a str,
    split: &'a str,
    views: usize,
    crop_size: Option<usize>,
    averaging: Averaging,
    mv_checkpoint: Option<&'a Path>,
    fusion_checkpoint: Option<&'a Path>,
    appearance_cache: Option<&'a Path>,
    encoder: Option<String>,
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| usage(format!("--mode {mode} needs {flag}")))
}

fn first_n(manifest: &SplitManifest, n: usize) -> SplitManifest {
    let entries = manifest.entries.iter().take(n).cloned().collect();
    SplitManifest { entries, ..manifest.clone() }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let file = ConfigFile::load(a.data.config.as_deref())?;
    let root = data_root(&a.data, &file)?;
    if a.views == 0 {
        return Err(usage("--views must be at least 1"));
    }
    if a.throughput_videos == Some(0) {
        return Err(usage("--throughput-videos must be at least 1"));
    }
    let layout = DatasetLayout::new(&root);
    let class_names = layout.class_names()?;
    let manifest = layout.manifest(&a.split, None)?;
    let averaging = match a.averaging {
        AveragingChoice::Probabilities => Averaging::Probabilities,
        AveragingChoice::Logits => Averaging::Logits,
    };
    let mode = match a.mode {
        EvalMode::ClipOnly => "clip-only",
        EvalMode::MvOnly => "mv-only",
        EvalMode::Fusion => "fusion",
    };
    let needs_encoder = a.mode == EvalMode::ClipOnly || (a.mode == EvalMode::Fusion && a.throughput_videos.is_some());
    let encoder = needs_encoder.then(|| build_encoder(&a.encoder, &root)).transpose()?;

    // Models are loaded before any output is written.
    let (mut motion, mut head, mut crop, mut trainable) = (None, None, None, 0usize);
    let mut mv_path = a.mv_checkpoint.clone();
    if a.mode == EvalMode::Fusion {
        let path = require(&a.fusion_checkpoint, "--fusion-checkpoint", mode)?;
        let (h, meta) = load_fusion_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        if mv_path.is_none() {
            let r = meta.mv_checkpoint.as_ref().ok_or_else(|| usage("the fusion checkpoint names no MV checkpoint"))?;
            r.verify()?;
            mv_path = Some(PathBuf::from(&r.path));
        }
        let (m, mv_meta) = load_mv_checkpoint(mv_path.as_ref().unwrap())?;
        let checksum = format!("{:016x}", m.param_checksum());
        if checksum != meta.motion_checksum {
            anyhow::bail!(
                "MV model checksum {checksum} differs from the one the head was trained on ({})",
                meta.motion_checksum
            );
        }
        crop = Some(a.crop_size.unwrap_or(mv_meta.train.crop_size));
        trainable = count_trainable_params(&h);
        head = Some(h);
        motion = Some(m);
    } else if a.mode == EvalMode::MvOnly {
        let path = require(&a.mv_checkpoint, "--mv-checkpoint", mode)?;
        let (m, meta) = load_mv_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        crop = Some(a.crop_size.unwrap_or(meta.train.crop_size));
        trainable = count_trainable_params(&m);
        motion = Some(m);
    }
    let appearance = match a.mode {
        EvalMode::MvOnly => None,
        _ => Some(read_feature_cache(require(&a.appearance_cache, "--appearance-cache", mode)?)?),
    };

    let mut run = RunDir::create(&a.out, "eval")?;
    run.write_resolved(&EvalResolved {
        data_root: &root,
        mode,
        split: &a.split,
        views: a.views,
        crop_size: crop,
        averaging,
        mv_checkpoint: mv_path.as_deref(),
        fusion_checkpoint: a.fusion_checkpoint.as_deref(),
        appearance_cache: a.appearance_cache.as_deref(),
        encoder: encoder.as_ref().map(|e| e.name()),
    })?;

    let opts = EvalOptions { protocol: ViewProtocol::test_with(a.views), crop_size: crop.unwrap_or(224), averaging };
    let predictor = match (&motion, &head) {
        (Some(m), Some(h)) => Some(Predictor::Fusion { motion: m, head: h }),
        (Some(m), None) => Some(Predictor::MvOnly(m)),
        _ => None,
    };
    let records = match (predictor, &encoder) {
        (Some(p), _) => predict_split(p, appearance.as_ref(), &manifest, &layout, &opts)?,
        (None, Some(enc)) => {
            let templates = match &a.templates {
                Some(p) => read_templates(p)?,
                None => default_templates(),
            };
            let library = build_text_library(&class_names, &templates, enc.as_ref())?;
            predict_zero_shot(appearance.as_ref().unwrap(), &library, &manifest)?
        }
        (None, None) => unreachable!("clip-only always builds an encoder"),
    };
    let result = EvalResult::from_log(records, &class_names)?;

    let throughput = match a.throughput_videos {
        Some(n) => {
            let subset = first_n(&manifest, n);
            let library = match &encoder {
                Some(enc) if a.mode == EvalMode::ClipOnly => {
                    Some(build_text_library(&class_names, &default_templates(), enc.as_ref())?)
                }
                _ => None,
            };
            let entries = &subset.entries;
            let t = throughput_benchmark(
                |i| {
                    let e = &entries[i % entries.len()];
                    let f_app = match &encoder {
                        Some(enc) => Some(encode_appearance(&layout.representative_frame(e)?, enc.as_ref())?),
                        None => None,
                    };
                    match predictor {
                        Some(p) => {
                            multiview_predict(&layout.load_clip(e)?, f_app.as_ref(), p, &opts)?;
                        }
                        None => {
                            let (_, cos) = zero_shot_classify(f_app.unwrap().values(), library.as_ref().unwrap())?;
                            softmax(&cos);
                        }
                    }
                    Ok(())
                },
                entries.len(),
                entries.len().min(2),
            )?;
            println!("throughput: {:.2} +/- {:.2} videos/s (batch size 1)", t.mean, t.std);
            Some(t)
        }
        None => None,
    };

    let pred_path = run.path("predictions.jsonl");
    write_predictions_jsonl(&result.predictions, &pred_path)?;
    run.produced(pred_path);
    run.write("per_class.csv", result.per_class_csv().as_bytes())?;
    run.write("confusion.csv", result.confusion_csv().as_bytes())?;
    run.write_json(
        "summary.json",
        &EvalSummary {
            mode: mode.into(),
            split: a.split.clone(),
            views: a.views,
            crop_size: crop,
            averaging,
            videos: result.predictions.len(),
            top1: result.top1,
            trainable_params: trainable,
            class_names,
            throughput,
        },
    )?;
    println!("{mode} top1 {:.4} on {} videos", result.top1, result.predictions.len());
    run.finish()
}

fn load_eval_dir(dir: &Path) -> Result<(EvalSummary, Vec<mvfuse_core::evaluator::PredictionRecord>)> {
    let p = dir.join("summary.json");
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let summary: EvalSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    Ok((summary, read_predictions_jsonl(&dir.join("predictions.jsonl"))?))
}

pub fn report(a: ReportArgs) -> Result<()> {
    let runs = [("clip-only", &a.clip_only), ("mv-only", &a.mv_only), ("fusion", &a.fusion)]
        .map(|(name, dir)| load_eval_dir(dir).map(|r| (name, r)));
    let [clip, mv, fusion] = runs;
    let (clip, mv, fusion) = (clip?, mv?, fusion?);
    let entries: Vec<AblationEntry> = [&clip, &mv, &fusion]
        .iter()
        .map(|(name, (s, _))| AblationEntry {
            name: (*name).into(),
            trainable_params: s.trainable_params,
            throughput: s.throughput.as_ref().map(|t| t.mean),
            top1: s.top1,
        })
        .collect();
    let table = ablation_table(&entries)?;
    let class_names = &fusion.1 .0.class_names;
    let qualitative = qualitative_report(&clip.1 .1, &mv.1 .1, &fusion.1 .1, class_names, a.k);

    let mut run = RunDir::create(&a.out, "report")?;
    run.write("ablation.txt", table.render_text().as_bytes())?;
    run.write("ablation.csv", table.to_csv().as_bytes())?;
    run.write_json("ablation.json", &table)?;
    run.write("qualitative.txt", qualitative.as_bytes())?;
    print!("{}", table.render_text());
    println!(
        "{} videos fixed by fusion listed in qualitative.txt",
        qualitative.lines().filter(|l| !l.starts_with(' ')).count()
    );
    run.finish()
}

#[derive(Serialize)]
struct FlopsResolved {
    ledger: Option<PathBuf>,
    policy: String,
    classes: usize,
    views: usize,
}

pub fn flops(a: FlopsArgs) -> Result<()> {
    if a.classes == 0 || a.views == 0 {
        return Err(usage("--classes and --views must be at least 1"));
    }
    let flag_policy =
        a.policy.as_deref().map(CountingPolicy::from_name).transpose().map_err(|e| usage(e.to_string()))?;
    let (ledgers, policy) = match &a.ledger {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let text = match &a.policy {
                Some(name) => {
                    let mut table: toml::Table =
                        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                    table.insert("policy".into(), name.clone().into());
                    toml::to_string(&table)?
                }
                None => text,
            };
            parse_ledger_file(&text).with_context(|| format!("ledger {}", path.display()))?
        }
        None => {
            let policy = flag_policy.unwrap_or_else(CountingPolicy::macs);
            (builtin_ledgers(&policy, a.classes, a.views)?, policy)
        }
    };
    let (text, csv) = render_flops_table(&ledgers, &policy);
    print!("{text}");
    if let Some(out) = &a.out {
        let mut run = RunDir::create(out, "flops")?;
        run.write_resolved(&FlopsResolved {
            ledger: a.ledger.clone(),
            policy: policy.describe(),
            classes: a.classes,
            views: a.views,
        })?;
        run.write("flops.txt", text.as_bytes())?;
        run.write("flops.csv", csv.as_bytes())?;
        run.finish()?;
    }
    Ok(())
}
