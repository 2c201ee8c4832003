//! Multi-view test protocol, accuracy metrics, ablation tables, qualitative
//! reports and throughput measurement.

use crate::appearance::{zero_shot_classify, ClassTextLibrary, ZERO_SHOT_LOGIT_SCALE};
use crate::dataset_io::{FeatureCache, FeatureVector, MvClip, SplitManifest};
use crate::error::{Error, IoContext, Result};
use crate::fusion::{fuse, FusionHead};
use crate::motion::{mean_rows, ClipSource, MotionModel};
use crate::temporal_sampler::{SamplingMode, ViewProtocol};
use mvfuse_nn::loss::{argmax, softmax};
use mvfuse_nn::par;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use std::time::Instant;

/// How per-view outputs are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-view softmax probabilities.
    #[default]
    Probabilities,
    /// Softmax of the mean per-view logits.
    Logits,
}

/// Combines per-view logits into one probability vector. The mean is taken
/// over sorted columns, so the result does not depend on view order.
pub fn average_views(view_logits: &[Vec<f32>], averaging: Averaging) -> Result<Vec<f32>> {
    let Some(first) = view_logits.first() else {
        return Err(Error::InvalidArgument("no views to average".into()));
    };
    if let Some(v) = view_logits.iter().find(|v| v.len() != first.len()) {
        return Err(Error::DimensionMismatch { expected: first.len(), found: v.len() });
    }
    Ok(match averaging {
        Averaging::Probabilities => {
            let probs: Vec<Vec<f32>> = view_logits.iter().map(|l| softmax(l)).collect();
            mean_rows(&probs.iter().map(Vec::as_slice).collect::<Vec<_>>())
        }
        Averaging::Logits => softmax(&mean_rows(&view_logits.iter().map(Vec::as_slice).collect::<Vec<_>>())),
    })
}

/// Trained model evaluated under the multi-view protocol.
#[derive(Clone, Copy)]
pub enum Predictor<'a> {
    MvOnly(&'a MotionModel),
    Fusion { motion: &'a MotionModel, head: &'a FusionHead },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub protocol: ViewProtocol,
    pub crop_size: usize,
    pub averaging: Averaging,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { protocol: ViewProtocol::test(), crop_size: 224, averaging: Averaging::Probabilities }
    }
}

/// Class probabilities of one clip averaged over its test views.
pub fn multiview_predict(
    clip: &MvClip,
    f_app: Option<&FeatureVector>,
    predictor: Predictor<'_>,
    options: &EvalOptions,
) -> Result<Vec<f32>> {
    if options.protocol.mode != SamplingMode::TestCenter {
        return Err(Error::InvalidArgument("multi-view prediction needs the test-center protocol".into()));
    }
    if options.protocol.n_spatial_crops != 1 {
        return Err(Error::InvalidArgument("only a single centre crop per segment is supported".into()));
    }
    let logits: Vec<Vec<f32>> = match predictor {
        Predictor::MvOnly(model) => model
            .view_features(clip, options.protocol.n_segments, options.crop_size)?
            .iter()
            .map(|f| model.mv_only_logits(f))
            .collect::<Result<_>>()?,
        Predictor::Fusion { motion, head } => {
            let f_app = f_app.ok_or_else(|| Error::CacheMiss(clip.video_id.clone()))?;
            let fused = motion
                .view_features(clip, options.protocol.n_segments, options.crop_size)?
                .iter()
                .map(|m| fuse(f_app, m))
                .collect::<Result<Vec<_>>>()?;
            head.logits(&fused.iter().map(FeatureVector::values).collect::<Vec<_>>())?
        }
    };
    average_views(&logits, options.averaging)
}

/// One line of the per-video prediction log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub label: usize,
    pub predicted: usize,
    pub probs: Vec<f32>,
}

impl PredictionRecord {
    pub fn new(video_id: impl Into<String>, label: usize, probs: Vec<f32>) -> Self {
        Self { video_id: video_id.into(), label, predicted: argmax(&probs), probs }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }

    /// Top `k` classes by probability, ties to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f32)> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.probs[i])).collect()
    }
}

fn check_log(log: &[PredictionRecord], num_classes: usize) -> Result<()> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty prediction log".into()));
    }
    for r in log {
        if r.label >= num_classes || r.predicted >= num_classes {
            return Err(Error::InvalidArgument(format!("video `{}` has a class id >= {num_classes}", r.video_id)));
        }
    }
    Ok(())
}

pub fn top1_accuracy(log: &[PredictionRecord]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::InvalidArgument("empty prediction log".into()));
    }
    Ok(log.iter().filter(|r| r.correct()).count() as f64 / log.len() as f64)
}

/// Accuracy of every class that occurs in the log.
pub fn per_class_accuracy(log: &[PredictionRecord], num_classes: usize) -> Result<BTreeMap<usize, f64>> {
    check_log(log, num_classes)?;
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in log {
        let e = counts.entry(r.label).or_default();
        e.0 += r.correct() as usize;
        e.1 += 1;
    }
    Ok(counts.into_iter().map(|(c, (hit, n))| (c, hit as f64 / n as f64)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub name: String,
    pub correct: usize,
    pub total: usize,
}

impl ClassAccuracy {
    /// `None` for a class with no test videos.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub top1: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<PredictionRecord>,
}

impl EvalResult {
    pub fn from_log(predictions: Vec<PredictionRecord>, class_names: &[String]) -> Result<Self> {
        let c = class_names.len();
        let top1 = top1_accuracy(&predictions)?;
        check_log(&predictions, c)?;
        let mut confusion = vec![vec![0usize; c]; c];
        for r in &predictions {
            confusion[r.label][r.predicted] += 1;
        }
        let per_class = class_names
            .iter()
            .enumerate()
            .map(|(i, name)| ClassAccuracy {
                class: i,
                name: name.clone(),
                correct: confusion[i][i],
                total: confusion[i].iter().sum(),
            })
            .collect();
        Ok(Self { top1, per_class, confusion, predictions })
    }

    /// `class,name,correct,total,accuracy` with one row per class.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,name,correct,total,accuracy\n");
        for p in &self.per_class {
            let acc = p.accuracy().map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{acc}", p.class, p.name, p.correct, p.total);
        }
        out
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

pub fn write_predictions_jsonl(log: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).at(path)?);
    for r in log {
        let line =
            serde_json::to_string(r).map_err(|e| Error::Malformed { path: path.into(), detail: e.to_string() })?;
        writeln!(f, "{line}").at(path)?;
    }
    f.flush().at(path)
}

pub fn read_predictions_jsonl(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = BufReader::new(std::fs::File::open(path).at(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Malformed { path: path.into(), detail: format!("line {}: {e}", i + 1) })?,
        );
    }
    Ok(out)
}

/// Multi-view predictions for every video of a split, in manifest order.
/// Fusion needs `appearance` to hold every video.
pub fn predict_split(
    predictor: Predictor<'_>,
    appearance: Option<&FeatureCache>,
    manifest: &SplitManifest,
    source: &dyn ClipSource,
    options: &EvalOptions,
) -> Result<Vec<PredictionRecord>> {
    if let (Predictor::Fusion { .. }, None) = (predictor, appearance) {
        return Err(Error::InvalidArgument("fusion evaluation needs an appearance cache".into()));
    }
    par::map_slice(&manifest.entries, |_, e| {
        let clip = source.load_clip(e)?;
        let f_app = match (predictor, appearance) {
            (Predictor::Fusion { .. }, Some(cache)) => Some(&cache.require(&e.video_id)?.feature),
            _ => None,
        };
        Ok(PredictionRecord::new(&e.video_id, e.label, multiview_predict(&clip, f_app, predictor, options)?))
    })
    .into_iter()
    .collect()
}

/// Zero-shot predictions from cached appearance features, with
/// probabilities `softmax(scale * cosine)`.
pub fn predict_zero_shot(
    appearance: &FeatureCache,
    library: &ClassTextLibrary,
    manifest: &SplitManifest,
) -> Result<Vec<PredictionRecord>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let f = &appearance.require(&e.video_id)?.feature;
            let (_, cos) = zero_shot_classify(f.values(), library)?;
            let scaled: Vec<f32> = cos.iter().map(|c| c * ZERO_SHOT_LOGIT_SCALE).collect();
            Ok(PredictionRecord::new(&e.video_id, e.label, softmax(&scaled)))
        })
        .collect()
}

/// One configuration of the ablation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub name: String,
    pub trainable_params: usize,
    /// Videos per second.
    pub throughput: Option<f64>,
    /// Fraction in `[0, 1]`.
    pub top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub params_m: String,
    pub throughput: Option<f64>,
    pub top1_percent: f64,
    /// Fusion row only: points over the best other row.
    pub delta_points: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Millions with two decimals, trailing zeros dropped: 0, 5.3, 0.97.
pub fn format_millions(params: usize) -> String {
    let s = format!("{:.2}", params as f64 / 1e6);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Builds the comparison. Accuracies are rounded to one decimal (as
/// reported) before the fusion delta is taken.
pub fn ablation_table(entries: &[AblationEntry]) -> Result<AblationTable> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("no results for the ablation table".into()));
    }
    let best_other = entries.iter().filter(|e| e.name != "fusion").map(|e| round1(e.top1 * 100.0)).reduce(f64::max);
    let rows = entries
        .iter()
        .map(|e| {
            let top1_percent = round1(e.top1 * 100.0);
            AblationRow {
                name: e.name.clone(),
                params_m: format_millions(e.trainable_params),
                throughput: e.throughput,
                top1_percent,
                delta_points: match (e.name.as_str(), best_other) {
                    ("fusion", Some(b)) => Some(round1(top1_percent - b)),
                    _ => None,
                },
            }
        })
        .collect();
    Ok(AblationTable { rows })
}

impl AblationTable {
    pub fn render_text(&self) -> String {
        let mut out = format!("{:<10} {:>10} {:>12} {:>7} {:>7}\n", "model", "params(M)", "videos/s", "top1", "delta");
        for r in &self.rows {
            let tp = r.throughput.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into());
            let delta = r.delta_points.map(|d| format!("{d:+.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<10} {:>10} {:>12} {:>7.1} {:>7}", r.name, r.params_m, tp, r.top1_percent, delta);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,params_m,videos_per_sec,top1,delta\n");
        for r in &self.rows {
            let tp = r.throughput.map(|t| format!("{t:.2}")).unwrap_or_default();
            let delta = r.delta_points.map(|d| format!("{d:.1}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{tp},{:.1},{delta}", r.name, r.params_m, r.top1_percent);
        }
        out
    }
}

/// Lists up to `k` videos that fusion gets right while both unimodal models
/// miss, with each model's top-3 classes.
pub fn qualitative_report(
    clip_only: &[PredictionRecord],
    mv_only: &[PredictionRecord],
    fusion: &[PredictionRecord],
    class_names: &[String],
    k: usize,
) -> String {
    let index = |log: &[PredictionRecord]| -> BTreeMap<String, PredictionRecord> {
        log.iter().map(|r| (r.video_id.clone(), r.clone())).collect()
    };
    let (clip, mv) = (index(clip_only), index(mv_only));
    let name = |c: usize| class_names.get(c).map(String::as_str).unwrap_or("?").to_string();
    let top3 = |r: &PredictionRecord| -> String {
        r.top_k(3).iter().map(|(c, p)| format!("{} {:.3}", name(*c), p)).collect::<Vec<_>>().join(", ")
    };
    let mut out = String::new();
    let cases = fusion.iter().filter_map(|f| {
        let (c, m) = (clip.get(&f.video_id)?, mv.get(&f.video_id)?);
        (f.correct() && !c.correct() && !m.correct()).then_some((f, c, m))
    });
    for (f, c, m) in cases.take(k) {
        let _ = writeln!(out, "{} (true: {})", f.video_id, name(f.label));
        let _ = writeln!(out, "  clip-only: {}", top3(c));
        let _ = writeln!(out, "  mv-only:   {}", top3(m));
        let _ = writeln!(out, "  fusion:    {}", top3(f));
    }
    out
}

pub const BENCH_REPETITIONS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    /// Videos per second of each repetition.
    pub repetitions: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Throughput {
    /// Whether every repetition lies within `tolerance` (relative) of the mean.
    pub fn is_stable(&self, tolerance: f64) -> bool {
        self.repetitions.iter().all(|r| (r - self.mean).abs() <= tolerance * self.mean)
    }
}

/// Times `n_videos` calls of `process_video` (batch size 1) per repetition
/// after `warmup` untimed calls.
pub fn throughput_benchmark(
    mut process_video: impl FnMut(usize) -> Result<()>,
    n_videos: usize,
    warmup: usize,
) -> Result<Throughput> {
    if n_videos == 0 {
        return Err(Error::InvalidArgument("throughput needs at least one video".into()));
    }
    for i in 0..warmup {
        process_video(i)?;
    }
    let mut repetitions = Vec::with_capacity(BENCH_REPETITIONS);
    for _ in 0..BENCH_REPETITIONS {
        let start = Instant::now();
        for i in 0..n_videos {
            process_video(i)?;
        }
        repetitions.push(n_videos as f64 / start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    let mean = repetitions.iter().sum::<f64>() / repetitions.len() as f64;
    let std = (repetitions.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / repetitions.len() as f64).sqrt();
    Ok(Throughput { repetitions, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::synth::{generate_synthetic_dataset, SynthConfig};
    use crate::dataset_io::{FeatureKind, FeatureRecord, MvFrame};
    use crate::motion::tests::tiny_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, label: usize, predicted: usize, classes: usize) -> PredictionRecord {
        let mut probs = vec![0.0; classes];
        probs[predicted] = 1.0;
        PredictionRecord::new(id, label, probs)
    }

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    fn random_clip(frames: usize, seed: u64) -> MvClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..frames)
            .map(|_| {
                let data = (0..2 * 16 * 16).map(|_| rng.random_range(-20i32..=20) as f32).collect();
                MvFrame::new(16, 16, data).unwrap()
            })
            .collect();
        MvClip::new("v", 0, frames).unwrap()
    }

    fn desk_options(views: usize) -> EvalOptions {
        EvalOptions { protocol: ViewProtocol::test_with(views), crop_size: 16, ..Default::default() }
    }

    #[test]
    fn constant_logits_give_uniform_probabilities() {
        let views = vec![vec![3.0f32; 4]; 5];
        for avg in [Averaging::Probabilities, Averaging::Logits] {
            assert_eq!(average_views(&views, avg).unwrap(), vec![0.25; 4]);
        }
        assert!(average_views(&[], Averaging::Probabilities).is_err());
        assert!(average_views(&[vec![0.0; 2], vec![0.0; 3]], Averaging::Probabilities).is_err());
    }

    proptest! {
        #[test]
        fn averaged_views_are_a_simplex_point_and_order_free(
            logits in prop::collection::vec(prop::collection::vec(-30.0f32..30.0, 7), 1..40),
            shift in 0usize..40,
        ) {
            for avg in [Averaging::Probabilities, Averaging::Logits] {
                let p = average_views(&logits, avg).unwrap();
                let sum: f64 = p.iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
                prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
                let mut rotated = logits.clone();
                rotated.rotate_left(shift % logits.len());
                rotated.reverse();
                prop_assert_eq!(&average_views(&rotated, avg).unwrap(), &p);
            }
        }
    }

    #[test]
    fn single_frame_video_equals_single_view_softmax() {
        let model = tiny_model(5, 3);
        let mut m = model;
        for (i, w) in m.head.weight.value.data_mut().iter_mut().enumerate() {
            *w = ((i % 13) as f32 - 6.0) * 0.05;
        }
        let clip = random_clip(1, 4);
        let opts = desk_options(32);
        let p = multiview_predict(&clip, None, Predictor::MvOnly(&m), &opts).unwrap();
        let one = m.view_features(&clip, 1, 16).unwrap();
        let want = softmax(&m.mv_only_logits(&one[0]).unwrap());
        for (a, b) in p.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn multiview_predict_contracts() {
        let m = tiny_model(4, 3);
        let clip = random_clip(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = FusionHead::new(4, &mut rng);
        let fusion = Predictor::Fusion { motion: &m, head: &head };
        let opts = desk_options(8);
        assert!(matches!(multiview_predict(&clip, None, fusion, &opts), Err(Error::CacheMiss(_))));
        let f_app = FeatureVector::new(FeatureKind::Appearance, (0..512).map(|i| (i as f32).sin()).collect()).unwrap();
        let p = multiview_predict(&clip, Some(&f_app), fusion, &opts).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        assert_eq!(p, multiview_predict(&clip, Some(&f_app), fusion, &opts).unwrap());
        let train = EvalOptions { protocol: ViewProtocol::train(), ..opts };
        assert!(multiview_predict(&clip, None, Predictor::MvOnly(&m), &train).is_err());
    }

    #[test]
    fn accuracy_metrics() {
        let all = vec![rec("a", 0, 0, 3), rec("b", 1, 1, 3), rec("c", 2, 2, 3)];
        assert_eq!(top1_accuracy(&all).unwrap(), 1.0);
        assert!(per_class_accuracy(&all, 3).unwrap().values().all(|&v| v == 1.0));
        let half = vec![rec("a", 0, 0, 2), rec("b", 0, 1, 2)];
        assert_eq!(top1_accuracy(&half).unwrap(), 0.5);
        assert_eq!(per_class_accuracy(&half, 2).unwrap()[&0], 0.5);
        assert!(top1_accuracy(&[]).is_err());
        assert!(per_class_accuracy(&[rec("a", 3, 0, 4)], 3).is_err());
        let tie = PredictionRecord::new("t", 1, vec![0.4, 0.4, 0.2]);
        assert_eq!(tie.predicted, 0);
    }

    proptest! {
        #[test]
        fn top1_is_the_count_weighted_per_class_mean(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let log: Vec<_> = pairs.iter().enumerate().map(|(i, &(y, p))| rec(&i.to_string(), y, p, 5)).collect();
            let res = EvalResult::from_log(log.clone(), &names(5)).unwrap();
            let weighted: usize = res.per_class.iter().map(|c| c.correct).sum();
            prop_assert_eq!(res.top1, weighted as f64 / log.len() as f64);
            let per = per_class_accuracy(&log, 5).unwrap();
            let mean: f64 = per.iter().map(|(c, a)| a * res.per_class[*c].total as f64).sum::<f64>() / log.len() as f64;
            prop_assert!((mean - res.top1).abs() < 1e-12);
            for (c, row) in res.confusion.iter().enumerate() {
                prop_assert_eq!(row.iter().sum::<usize>(), pairs.iter().filter(|p| p.0 == c).count());
            }
        }
    }

    #[test]
    fn eval_result_files() {
        let log = vec![rec("a", 0, 0, 3), rec("b", 0, 2, 3)];
        let res = EvalResult::from_log(log.clone(), &names(3)).unwrap();
        let csv = res.per_class_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("0,c0,1,2,0.500000"));
        assert!(csv.contains("1,c1,0,0,\n"));
        assert_eq!(res.confusion_csv(), "1,0,1\n0,0,0\n0,0,0\n");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_predictions_jsonl(&log, &path).unwrap();
        assert_eq!(read_predictions_jsonl(&path).unwrap(), log);
    }

    #[test]
    fn ablation_rows_for_reported_values() {
        let entries = [
            AblationEntry { name: "clip-only".into(), trainable_params: 0, throughput: None, top1: 0.650 },
            AblationEntry {
                name: "mv-only".into(),
                trainable_params: 5_300_000,
                throughput: Some(286.85),
                top1: 0.665,
            },
            AblationEntry { name: "fusion".into(), trainable_params: 969_829, throughput: Some(275.31), top1: 0.892 },
        ];
        let t = ablation_table(&entries).unwrap();
        let params: Vec<&str> = t.rows.iter().map(|r| r.params_m.as_str()).collect();
        assert_eq!(params, ["0", "5.3", "0.97"]);
        let top1: Vec<f64> = t.rows.iter().map(|r| r.top1_percent).collect();
        assert_eq!(top1, [65.0, 66.5, 89.2]);
        // Computed from the rows: 89.2 - 66.5.
        assert_eq!(t.rows[2].delta_points, Some(22.7));
        assert_eq!(t.rows[0].delta_points, None);
        assert!(t.render_text().contains("+22.7"));
        assert_eq!(t.to_csv().lines().count(), 4);
        assert!(ablation_table(&[]).is_err());
    }

    #[test]
    fn qualitative_report_cases() {
        let n = names(2);
        let clip = vec![rec("a", 0, 1, 2), rec("b", 1, 1, 2)];
        let mv = vec![rec("a", 0, 1, 2), rec("b", 1, 0, 2)];
        let fusion = vec![rec("a", 0, 0, 2), rec("b", 1, 1, 2)];
        let report = qualitative_report(&clip, &mv, &fusion, &n, 5);
        assert!(report.starts_with("a (true: c0)"));
        assert!(!report.contains("b (true"));
        assert_eq!(report.lines().count(), 4);
        assert_eq!(qualitative_report(&clip, &mv, &fusion, &n, 0), "");
        assert_eq!(qualitative_report(&fusion, &fusion, &fusion, &n, 5), "");
    }

    #[test]
    fn throughput_reports_three_repetitions() {
        let mut calls = 0;
        let t = throughput_benchmark(
            |_| {
                calls += 1;
                Ok(())
            },
            4,
            2,
        )
        .unwrap();
        assert_eq!(calls, 2 + 3 * 4);
        assert_eq!(t.repetitions.len(), 3);
        assert!(t.mean > 0.0 && t.std >= 0.0);
        assert!(throughput_benchmark(|_| Ok(()), 0, 0).is_err());
    }

    #[test]
    fn split_predictions() {
        let ds =
            generate_synthetic_dataset(&SynthConfig { per_class: 1, test_per_class: 1, ..Default::default() }).unwrap();
        let m = tiny_model(4, 2);
        let opts = EvalOptions { crop_size: 32, ..desk_options(4) };
        let a = predict_split(Predictor::MvOnly(&m), None, &ds.test, &ds, &opts).unwrap();
        assert_eq!(a.len(), ds.test.len());
        assert_eq!(a, predict_split(Predictor::MvOnly(&m), None, &ds.test, &ds, &opts).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = FusionHead::new(4, &mut rng);
        let fusion = Predictor::Fusion { motion: &m, head: &head };
        assert!(predict_split(fusion, None, &ds.test, &ds, &opts).is_err());
        let records: Vec<FeatureRecord> = ds.test.entries[..1]
            .iter()
            .map(|e| FeatureRecord {
                video_id: e.video_id.clone(),
                label: e.label,
                feature: FeatureVector::zeros(FeatureKind::Appearance),
            })
            .collect();
        let partial = FeatureCache::new(FeatureKind::Appearance, records).unwrap();
        assert!(matches!(predict_split(fusion, Some(&partial), &ds.test, &ds, &opts), Err(Error::CacheMiss(_))));
    }
}
