//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so
//! the timing checks do not compete with other tests for the CPU.
//!
//! `cargo test -p mvfuse-core --test acceptance [-- 1 3 8]` runs all or the
//! listed criteria. The process exits non-zero if any criterion outside
//! [`KNOWN_UNATTAINABLE`] fails, or if any criterion fails with
//! `ACCEPTANCE_STRICT=1`.

use mvfuse_core::appearance::mock::OrthonormalMockEncoder;
use mvfuse_core::appearance::{
    build_text_library, compute_appearance_features, default_templates, zero_shot_classify, EncoderClient,
};
use mvfuse_core::config::TrainConfig;
use mvfuse_core::cost_accounting::{builtin_ledgers, flops_total, CountingPolicy, ModelRef};
use mvfuse_core::dataset_io::cache::{APPEARANCE_DIM, FUSED_DIM, MOTION_DIM};
use mvfuse_core::dataset_io::synth::{generate_synthetic_dataset, palette_color, SynthConfig, SyntheticDataset};
use mvfuse_core::dataset_io::{write_feature_cache, FeatureCache, FeatureKind, FeatureVector, MvClip, MvFrame};
use mvfuse_core::evaluator::{
    average_views, multiview_predict, predict_split, predict_zero_shot, throughput_benchmark, top1_accuracy, Averaging,
    EvalOptions, Predictor,
};
use mvfuse_core::fusion::{fuse, motion_feature_records, train_fusion_head, FrozenInputs, FusionHead};
use mvfuse_core::motion::{count_trainable_params, train_mv_classifier, MotionModel};
use mvfuse_core::mv_transforms::{hflip_mv, normalize_mv, normalize_value};
use mvfuse_core::temporal_sampler::{sample_test_indices, ViewProtocol};
use mvfuse_nn::efficientnet::EfficientNetConfig;
use mvfuse_nn::layers::{Linear, Module};
use mvfuse_nn::loss::cross_entropy;
use mvfuse_nn::{Parameterized, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Full 2-channel B0 as trained at desk scale.
fn desk_motion_model(classes: usize, seed: u64) -> MotionModel {
    let cfg = EfficientNetConfig { stochastic_depth: 0.0, ..EfficientNetConfig::b0(2) };
    MotionModel::with_config(cfg, classes, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn mock_encoder(ds: &SyntheticDataset) -> OrthonormalMockEncoder {
    let palette = (0..ds.class_names.len()).map(palette_color).collect();
    OrthonormalMockEncoder::new(&ds.class_names, palette).unwrap()
}

fn appearance_cache(ds: &SyntheticDataset, encoder: &dyn EncoderClient) -> Result<FeatureCache, String> {
    let mut records = compute_appearance_features(&ds.train, ds, encoder).map_err(err)?;
    records.extend(compute_appearance_features(&ds.test, ds, encoder).map_err(err)?);
    FeatureCache::new(FeatureKind::Appearance, records).map_err(err)
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> MvFrame {
    let data = (0..2 * h * w).map(|_| rng.random_range(-300i32..=300) as f32).collect();
    MvFrame::new(h, w, data).unwrap()
}

fn criterion_1() -> Check {
    let head = FusionHead::new(101, &mut ChaCha8Rng::seed_from_u64(0));
    let n = count_trainable_params(&head);
    ensure(n == 969_829, format!("fusion head has {n} trainable parameters, expected 969829"))?;
    Ok(format!("fusion head trainable parameters: {n}"))
}

fn criterion_2() -> Check {
    let ds = generate_synthetic_dataset(&SynthConfig { per_class: 1, test_per_class: 1, ..Default::default() })
        .map_err(err)?;
    let enc = mock_encoder(&ds);
    let f_app = compute_appearance_features(&ds.train, &ds, &enc).map_err(err)?.remove(0).feature;
    let model = desk_motion_model(101, 0);
    let clip = mvfuse_core::motion::ClipSource::load_clip(&ds, &ds.train.entries[0]).map_err(err)?;
    let f_motion = model.view_features(&clip, 1, 32).map_err(err)?.remove(0);
    let fused = fuse(&f_app, &f_motion).map_err(err)?;
    let dims = (f_app.dim(), f_motion.dim(), fused.dim());
    ensure(dims == (512, 1280, 1792), format!("dims {dims:?}"))?;
    ensure((APPEARANCE_DIM, MOTION_DIM, FUSED_DIM) == (512, 1280, 1792), "dimension constants")?;
    ensure(fuse(&f_motion, &f_app).is_err(), "swapped fuse operands accepted")?;
    Ok(format!("f_app {} f_motion {} f_fusion {}", dims.0, dims.1, dims.2))
}

fn criterion_3() -> Check {
    let policy = CountingPolicy::macs();
    let per_view = ModelRef::MvClassifier.gflops(101, 224, &policy).map_err(err)?;
    ensure((per_view - 0.39).abs() <= 0.02, format!("MV per-view {per_view:.4} G outside 0.39 +/- 0.02"))?;
    let ledgers = builtin_ledgers(&policy, 101, 32).map_err(err)?;
    let mut rows = Vec::new();
    for (l, want) in ledgers.iter().zip([4.4, 12.5, 16.9]) {
        let got = flops_total(l);
        ensure((got - want).abs() <= 0.1, format!("{} total {got:.3} G, expected {want} +/- 0.1", l.name))?;
        rows.push(format!("{} {got:.2}", l.name));
    }
    ensure(rows.len() == 3, "expected three built-in ledgers")?;
    Ok(format!("{} GFLOPs; MV per view {per_view:.3} G", rows.join(", ")))
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut out_of_range = 0usize;
    for i in 0..100_000 {
        let x = if i % 2 == 0 { rng.random_range(-25.0f32..25.0) } else { rng.random_range(-32768.0f32..32767.0) };
        let y = normalize_value(x);
        if !(-0.5..=0.5).contains(&y) || !y.is_finite() {
            out_of_range += 1;
        }
    }
    ensure(out_of_range == 0, format!("{out_of_range} of 1e5 outputs outside [-0.5, 0.5]"))?;
    let frame = MvFrame::new(1, 3, vec![20.0, -20.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let n = normalize_mv(&frame);
    let (pos, neg, zero) = (n.data()[0], n.data()[1], n.data()[2]);
    let mut fails = Vec::new();
    if pos != 0.5 {
        fails.push(format!("20 -> {pos} (expected 0.5)"));
    }
    if neg != -0.5 {
        fails.push(format!("-20 -> {neg} (expected -0.5)"));
    }
    if zero.abs() > 1.0 / 255.0 {
        fails.push(format!("0 -> {zero} (expected within 1/255 of 0)"));
    }
    ensure(fails.is_empty(), fails.join("; "))?;
    Ok("20 -> 0.5, -20 -> -0.5, 0 -> ~0, 1e5 outputs in range".into())
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let f = random_frame(&mut rng, h, w);
        let g = hflip_mv(&f);
        ensure(hflip_mv(&g) == f, format!("case {case}: flip is not an involution"))?;
        let (a, b) = (f.data(), g.data());
        for y in 0..h {
            for x in 0..w {
                let (src, dst) = (y * w + w - 1 - x, y * w + x);
                ensure(b[dst] == -a[src], format!("case {case}: dx not negated at ({y},{x})"))?;
                ensure(b[h * w + dst] == a[h * w + src], format!("case {case}: dy changed at ({y},{x})"))?;
            }
        }
    }
    Ok("1000 random frames: flip(flip(f)) = f, dx mirrored and negated, dy mirrored".into())
}

fn criterion_6() -> Check {
    for n in [3usize, 32] {
        for t in 1..=1000usize {
            let a = sample_test_indices(t, n).map_err(err)?;
            ensure(a == sample_test_indices(t, n).map_err(err)?, format!("T={t} N={n} not deterministic"))?;
            ensure(a.len() == n, format!("T={t} N={n}: length {}", a.len()))?;
            ensure(a.iter().all(|&i| i < t), format!("T={t} N={n}: index out of bounds"))?;
        }
    }
    let want: Vec<usize> = (0..32).map(|k| 5 + 10 * k).collect();
    ensure(sample_test_indices(320, 32).map_err(err)? == want, "T=320 N=32 indices differ from [5,15,...,315]")?;
    Ok("deterministic, length N, in bounds for T in 1..=1000, N in {3, 32}; T=320 gives [5,15,...,315]".into())
}

fn criterion_7() -> Check {
    let ds = generate_synthetic_dataset(&SynthConfig { per_class: 2, test_per_class: 1, ..Default::default() })
        .map_err(err)?;
    let app = appearance_cache(&ds, &mock_encoder(&ds))?;
    let dir = tempfile::tempdir().map_err(err)?;
    let cache_path = dir.path().join("appearance.mclf");
    let records: Vec<_> = ds.train.entries.iter().map(|e| app.require(&e.video_id).unwrap().clone()).collect();
    write_feature_cache(&records, &cache_path).map_err(err)?;
    let file_before = mvfuse_core::checkpoint::file_sha256(&cache_path).map_err(err)?;

    let motion = desk_motion_model(4, 7);
    let (backbone_before, model_before, digest_before) =
        (motion.backbone_checksum(), motion.param_checksum(), app.digest().map_err(err)?);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, crop_size: 32, seed: 7, ..TrainConfig::fusion() };
    let inputs = FrozenInputs { appearance: &app, motion: &motion, source: &ds, motion_cache: None };
    let out = train_fusion_head(FusionHead::new(4, &mut ChaCha8Rng::seed_from_u64(7)), &inputs, &ds.train, &cfg)
        .map_err(err)?;
    ensure(out.steps == 4, format!("expected 4 head steps, ran {}", out.steps))?;
    ensure(motion.backbone_checksum() == backbone_before, "MV backbone checksum changed")?;
    ensure(motion.param_checksum() == model_before, "MV model checksum changed")?;
    ensure(app.digest().map_err(err)? == digest_before, "appearance cache digest changed")?;
    ensure(mvfuse_core::checkpoint::file_sha256(&cache_path).map_err(err)? == file_before, "cache file changed")?;
    Ok(format!(
        "backbone {backbone_before:016x} and cache {} unchanged after {} steps",
        &digest_before[..16],
        out.steps
    ))
}

struct XorRun {
    clip_only: f64,
    mv_only: f64,
    fusion: f64,
}

fn xor_run(seed: u64) -> Result<XorRun, String> {
    let ds = generate_synthetic_dataset(&SynthConfig { xor: true, seed, ..Default::default() }).map_err(err)?;
    let eval = EvalOptions { protocol: ViewProtocol::test(), crop_size: 32, averaging: Averaging::Probabilities };

    let enc = mock_encoder(&ds);
    let app = appearance_cache(&ds, &enc)?;
    let library = build_text_library(&ds.class_names, &default_templates(), &enc).map_err(err)?;
    let clip_only = top1_accuracy(&predict_zero_shot(&app, &library, &ds.test).map_err(err)?).map_err(err)?;

    let mv_cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        lr: 1e-3,
        lr_milestones: Vec::new(),
        crop_size: 32,
        seed,
        ..TrainConfig::mv_only()
    };
    let mv = train_mv_classifier(desk_motion_model(4, seed), &ds.train, None, &ds, &mv_cfg).map_err(err)?.model;
    let mv_only =
        top1_accuracy(&predict_split(Predictor::MvOnly(&mv), None, &ds.test, &ds, &eval).map_err(err)?).map_err(err)?;

    let fusion_cfg = TrainConfig { epochs: 300, batch_size: 8, lr: 1e-3, crop_size: 32, seed, ..TrainConfig::fusion() };
    let records = motion_feature_records(&mv, &ds.train, &ds, fusion_cfg.segments, 32).map_err(err)?;
    let motion_cache = FeatureCache::new(FeatureKind::Motion, records).map_err(err)?;
    let inputs = FrozenInputs { appearance: &app, motion: &mv, source: &ds, motion_cache: Some(&motion_cache) };
    let head = FusionHead::new(4, &mut ChaCha8Rng::seed_from_u64(seed));
    let head = train_fusion_head(head, &inputs, &ds.train, &fusion_cfg).map_err(err)?.head;
    let predictor = Predictor::Fusion { motion: &mv, head: &head };
    let fusion =
        top1_accuracy(&predict_split(predictor, Some(&app), &ds.test, &ds, &eval).map_err(err)?).map_err(err)?;
    Ok(XorRun { clip_only, mv_only, fusion })
}

fn criterion_8() -> Check {
    let runs = (0..3u64).map(xor_run).collect::<Result<Vec<_>, _>>()?;
    let mean = |f: fn(&XorRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (clip, mv, fusion) = (mean(|r| r.clip_only), mean(|r| r.mv_only), mean(|r| r.fusion));
    let per_seed: Vec<String> =
        runs.iter().map(|r| format!("{:.3}/{:.3}/{:.3}", r.clip_only, r.mv_only, r.fusion)).collect();
    let summary = format!(
        "mean over 3 seeds: clip-only {clip:.3}, mv-only {mv:.3}, fusion {fusion:.3} (per seed {})",
        per_seed.join(" ")
    );
    ensure(fusion >= 0.95 && clip <= 0.60 && mv <= 0.60, summary.clone())?;
    Ok(summary)
}

fn criterion_9() -> Check {
    let ds = generate_synthetic_dataset(&SynthConfig::default()).map_err(err)?;
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 16,
        lr: 1e-3,
        lr_milestones: Vec::new(),
        crop_size: 32,
        max_steps: Some(200),
        seed: 0,
        ..TrainConfig::mv_only()
    };
    let out = train_mv_classifier(desk_motion_model(4, 0), &ds.train, Some(&ds.train), &ds, &cfg).map_err(err)?;
    let first = out.history.iter().find(|h| h.val_top1 == Some(1.0));
    let steps_to_full: usize = match first {
        Some(h) => out.history[..=h.epoch].iter().map(|e| e.steps).sum(),
        None => return Err(format!("best training accuracy {:.3} after {} steps", out.best_metric, out.steps)),
    };
    ensure(steps_to_full <= 200, format!("100% only after {steps_to_full} steps"))?;
    Ok(format!("100% training accuracy (eval mode, 4 classes x 8 videos) after {steps_to_full} steps"))
}

/// Mean cross-entropy of `x W^T + b` in f64.
fn reference_loss(w: &[f64], b: &[f64], x: &[f32], labels: &[usize], d: usize, c: usize) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let logits: Vec<f64> =
            (0..c).map(|k| b[k] + (0..d).map(|j| w[k * d + j] * x[i * d + j] as f64).sum::<f64>()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    total / labels.len() as f64
}

fn criterion_10() -> Check {
    let (n, d, c) = (6, 40, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut lin = Linear::new(d, c, true, &mut rng);
    for v in lin.bias.as_mut().unwrap().value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let x: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    lin.zero_grad();
    let logits = lin.forward(&Tensor::from_vec(&[n, d], x.clone()).unwrap(), &mut rng);
    let (_, g) = cross_entropy(&logits, &labels);
    lin.backward(&g);

    let mut w: Vec<f64> = lin.weight.value.data().iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = lin.bias.as_ref().unwrap().value.data().iter().map(|&v| v as f64).collect();
    let eps = 1e-5;
    let mut numeric = Vec::new();
    for i in 0..w.len() {
        let o = w[i];
        w[i] = o + eps;
        let lp = reference_loss(&w, &b, &x, &labels, d, c);
        w[i] = o - eps;
        let lm = reference_loss(&w, &b, &x, &labels, d, c);
        w[i] = o;
        numeric.push((lp - lm) / (2.0 * eps));
    }
    for i in 0..b.len() {
        let o = b[i];
        b[i] = o + eps;
        let lp = reference_loss(&w, &b, &x, &labels, d, c);
        b[i] = o - eps;
        let lm = reference_loss(&w, &b, &x, &labels, d, c);
        b[i] = o;
        numeric.push((lp - lm) / (2.0 * eps));
    }
    let analytic: Vec<f64> =
        lin.weight.grad.data().iter().chain(lin.bias.as_ref().unwrap().grad.data()).map(|&v| v as f64).collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let rel = diff / norm(&analytic).max(norm(&numeric));
    ensure(rel <= 1e-4, format!("relative error {rel:.3e} > 1e-4"))?;
    Ok(format!("linear head + cross-entropy, {} parameters: relative error {rel:.2e}", analytic.len()))
}

fn criterion_11() -> Check {
    let ds = generate_synthetic_dataset(&SynthConfig { per_class: 1, test_per_class: 3, ..Default::default() })
        .map_err(err)?;
    let enc = mock_encoder(&ds);
    let library = build_text_library(&ds.class_names, &default_templates(), &enc).map_err(err)?;
    let records = compute_appearance_features(&ds.test, &ds, &enc).map_err(err)?;
    let mut correct = 0;
    for r in &records {
        let (pred, scores) = zero_shot_classify(r.feature.values(), &library).map_err(err)?;
        correct += (pred == r.label) as usize;
        for (k, &s) in scores.iter().enumerate() {
            let want = if k == r.label { 1.0 } else { 0.0 };
            ensure(s == want, format!("{}: score {s} for class {k}, expected {want}", r.video_id))?;
        }
    }
    let acc = correct as f64 / records.len() as f64;
    ensure(acc == 1.0, format!("accuracy {acc}"))?;
    Ok(format!("accuracy 1.0 on {} videos; cosine 1.0 for the true class, 0.0 otherwise", records.len()))
}

fn criterion_12() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..200 {
        let views: Vec<Vec<f32>> =
            (0..32).map(|_| (0..101).map(|_| rng.random_range(-20.0f32..20.0)).collect()).collect();
        let p = average_views(&views, Averaging::Probabilities).map_err(err)?;
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        ensure((sum - 1.0).abs() <= 1e-6, format!("case {case}: sum {sum}"))?;
        let mut shuffled = views.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
        ensure(average_views(&shuffled, Averaging::Probabilities).map_err(err)? == p, format!("case {case}: order"))?;
    }
    let model = desk_motion_model(101, 12);
    let mut m = model;
    for v in m.head.weight.value.data_mut() {
        *v = rng.random_range(-0.1..0.1);
    }
    let frames = (0..40).map(|_| random_frame(&mut rng, 32, 32)).collect();
    let clip = MvClip::new("v", 0, frames).map_err(err)?;
    let opts = EvalOptions { protocol: ViewProtocol::test(), crop_size: 32, averaging: Averaging::Probabilities };
    let p = multiview_predict(&clip, None, Predictor::MvOnly(&m), &opts).map_err(err)?;
    let sum: f64 = p.iter().map(|&v| v as f64).sum();
    ensure(p.len() == 101 && (sum - 1.0).abs() <= 1e-6, format!("32-view MV prediction sums to {sum}"))?;
    let f_app = FeatureVector::new(FeatureKind::Appearance, vec![0.01; 512]).map_err(err)?;
    let head = FusionHead::new(101, &mut rng);
    let q =
        multiview_predict(&clip, Some(&f_app), Predictor::Fusion { motion: &m, head: &head }, &opts).map_err(err)?;
    let sum_q: f64 = q.iter().map(|&v| v as f64).sum();
    ensure((sum_q - 1.0).abs() <= 1e-6, format!("32-view fusion prediction sums to {sum_q}"))?;
    Ok("200 random 32-view sets: sum within 1e-6 and identical under view shuffles; model outputs sum to 1".into())
}

/// Stub "model" whose per-video cost is `units` fixed blocks of arithmetic.
fn stub_work(units: usize) {
    let mut acc = 0.0f64;
    for i in 0..units * 20_000 {
        acc = black_box(acc + (i as f64).sqrt());
    }
    black_box(acc);
}

fn criterion_13() -> Check {
    let single = throughput_benchmark(
        |_| {
            stub_work(10);
            Ok(())
        },
        100,
        5,
    )
    .map_err(err)?;
    ensure(single.mean > 0.0, "non-positive throughput")?;
    ensure(single.is_stable(0.2), format!("repetitions {:?} not within 20% of the mean", single.repetitions))?;
    let double = throughput_benchmark(
        |_| {
            stub_work(20);
            Ok(())
        },
        100,
        5,
    )
    .map_err(err)?;
    let ratio = double.mean / single.mean;
    ensure((ratio - 0.5).abs() <= 0.125, format!("doubling work changed throughput by x{ratio:.3}"))?;

    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).map_err(err)?;
    for needle in ["mvfuse train-mv", "mvfuse train-fusion", "mvfuse eval", "--views 32", "mvfuse precompute-clip"] {
        ensure(readme.contains(needle), format!("README lacks the full-scale command `{needle}`"))?;
    }
    Ok(format!(
        "stub {:.0} +/- {:.0} videos/s (3 reps within 20%), doubled work x{ratio:.2}; full-scale commands documented",
        single.mean, single.std
    ))
}

type Criterion = (&'static str, fn() -> Check);

const CRITERIA: [Criterion; 13] = [
    ("exact fusion head parameter count", criterion_1),
    ("feature dimension contracts", criterion_2),
    ("FLOPs table reproduction", criterion_3),
    ("normalisation suite", criterion_4),
    ("flip involution and dx negation", criterion_5),
    ("sampler contracts", criterion_6),
    ("freezing contract", criterion_7),
    ("complementarity on the XOR set", criterion_8),
    ("MV-only overfit smoke test", criterion_9),
    ("linear head gradient check", criterion_10),
    ("zero-shot under an orthonormal mock", criterion_11),
    ("multi-view simplex and order invariance", criterion_12),
    ("full-scale scope and throughput harness", criterion_13),
];

/// Criteria whose stated value contradicts the formula it tests. They still
/// run and print FAIL. Criterion 4: the normalisation maps -20 to
/// 0.5/255 - 0.5, not -0.5.
const KNOWN_UNATTAINABLE: &[usize] = &[4];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let (mut failed, mut expected) = (0, Vec::new());
    for (i, (title, check)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS {title} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                if KNOWN_UNATTAINABLE.contains(&n) {
                    expected.push(n);
                } else {
                    failed += 1;
                }
                println!("criterion {n:>2} FAIL {title} [{secs:.1}s]: {detail}");
            }
        }
    }
    if !expected.is_empty() {
        println!("known unattainable, failed as expected: {expected:?}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
    }
    if failed > 0 || (strict && !expected.is_empty()) {
        std::process::exit(1);
    }
}
