//! Motion pathway: a 2-channel EfficientNet-B0 over normalised MV frames,
//! segment averaging, the MV-only linear classifier and its training loop.

pub(crate) mod train;

pub use train::{train_mv_classifier, EpochLog, MvTrainOutcome};

use crate::dataset_io::{DatasetLayout, FeatureKind, FeatureVector, ManifestEntry, MvClip, SyntheticDataset};
use crate::error::{Error, Result};
use crate::mv_transforms::{eval_view, NormalizedMvFrame};
use crate::temporal_sampler::sample_test_indices;
use mvfuse_nn::arch::LayerSpec;
use mvfuse_nn::efficientnet::{EfficientNet, EfficientNetConfig, STEM_WEIGHT};
use mvfuse_nn::layers::{BatchNorm2d, Linear, Module};
use mvfuse_nn::param::{join, Param};
use mvfuse_nn::{Parameterized, Tensor};
use rand::RngCore;
use std::collections::BTreeMap;
use std::path::Path;

/// Frames per inference batch in evaluation.
const EVAL_CHUNK: usize = 16;

/// Turns RGB stem filters `[K, 3, h, w]` into 2-channel filters: each output
/// channel is the RGB mean scaled by 3/2, so a channel-constant input
/// produces the same response as before.
pub fn adapt_stem(weights: &Tensor) -> Result<Tensor> {
    let s = weights.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::InvalidArgument(format!("stem weights must be [K, 3, h, w], got {s:?}")));
    }
    let (k, plane) = (s[0], s[2] * s[3]);
    let src = weights.data();
    let mut out = Vec::with_capacity(k * 2 * plane);
    for f in 0..k {
        let base = f * 3 * plane;
        let mean: Vec<f32> = (0..plane)
            .map(|i| (src[base + i] + src[base + plane + i] + src[base + 2 * plane + i]) / 3.0 * 1.5)
            .collect();
        out.extend_from_slice(&mean);
        out.extend_from_slice(&mean);
    }
    Ok(Tensor::from_vec(&[k, 2, s[2], s[3]], out)?)
}

/// Element-wise mean of segment features.
///
/// Each coordinate is summed in f64 over its sorted values, so the result
/// does not depend on segment order.
pub fn aggregate_segments(features: &[FeatureVector]) -> Result<FeatureVector> {
    let first = features.first().ok_or_else(|| Error::InvalidArgument("no segment features".into()))?;
    let dim = first.dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
    }
    let rows: Vec<&[f32]> = features.iter().map(|f| f.values()).collect();
    FeatureVector::new(first.kind(), mean_rows(&rows))
}

pub(crate) fn mean_rows(rows: &[&[f32]]) -> Vec<f32> {
    let n = rows.len() as f64;
    let mut col = vec![0.0f32; rows.len()];
    (0..rows[0].len())
        .map(|j| {
            col.iter_mut().zip(rows).for_each(|(c, r)| *c = r[j]);
            col.sort_unstable_by(f32::total_cmp);
            (col.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
        })
        .collect()
}

/// Stacks equally sized normalised frames into `[K, 2, H, W]`.
pub fn frames_to_tensor(frames: &[NormalizedMvFrame]) -> Result<Tensor> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(frames.len() * 2 * h * w);
    for f in frames {
        if (f.height(), f.width()) != (h, w) {
            return Err(Error::InvalidArgument(format!("frame {}x{} does not match {h}x{w}", f.height(), f.width())));
        }
        data.extend_from_slice(f.data());
    }
    Ok(Tensor::from_vec(&[frames.len(), 2, h, w], data)?)
}

/// MV backbone (input normalisation + EfficientNet) and the MV-only linear
/// classifier. Parameter names: `input_norm.*`, `backbone.features.*`,
/// `head.*`.
pub struct MotionModel {
    pub input_norm: BatchNorm2d,
    pub backbone: EfficientNet,
    pub head: Linear,
    train_segments: usize,
}

impl MotionModel {
    pub fn new(num_classes: usize, rng: &mut dyn RngCore) -> Self {
        Self::with_config(EfficientNetConfig::b0(2), num_classes, rng)
    }

    pub fn with_config(config: EfficientNetConfig, num_classes: usize, rng: &mut dyn RngCore) -> Self {
        assert_eq!(config.in_channels, 2, "motion backbone takes 2-channel input");
        let backbone = EfficientNet::new(config, rng);
        let mut head = Linear::classifier(backbone.feature_dim(), num_classes, rng);
        head.weight.value.fill(0.0);
        if let Some(b) = &mut head.bias {
            b.value.fill(0.0);
        }
        Self { input_norm: BatchNorm2d::new(2), backbone, head, train_segments: 1 }
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_features
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn config(&self) -> &EfficientNetConfig {
        &self.backbone.config
    }

    /// Loads ImageNet weights in torchvision `features.*` naming, adapting
    /// the RGB stem to two channels. Classifier tensors are ignored.
    pub fn load_imagenet_backbone(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut map: BTreeMap<String, Tensor> =
            tensors.iter().filter(|(k, _)| k.starts_with("features.")).map(|(k, v)| (k.clone(), v.clone())).collect();
        let stem = map.get(STEM_WEIGHT).ok_or_else(|| mvfuse_nn::NnError::MissingTensor(STEM_WEIGHT.into()))?;
        let adapted = adapt_stem(stem)?;
        map.insert(STEM_WEIGHT.to_string(), adapted);
        mvfuse_nn::state::load_state_dict(&mut self.backbone, "", &map)?;
        Ok(())
    }

    /// Backbone features of a `[K, 2, H, W]` batch in evaluation mode.
    pub fn infer_features(&self, frames: &Tensor) -> Tensor {
        self.backbone.infer(&self.input_norm.infer(frames))
    }

    pub fn extract_segment_feature(&self, frame: &NormalizedMvFrame) -> Result<FeatureVector> {
        Ok(self.extract_segment_features(std::slice::from_ref(frame))?.remove(0))
    }

    pub fn extract_segment_features(&self, frames: &[NormalizedMvFrame]) -> Result<Vec<FeatureVector>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(EVAL_CHUNK) {
            let y = self.infer_features(&frames_to_tensor(chunk)?);
            for i in 0..chunk.len() {
                out.push(FeatureVector::new(FeatureKind::Motion, y.row(i).to_vec())?);
            }
        }
        Ok(out)
    }

    pub fn mv_only_logits(&self, f_motion: &FeatureVector) -> Result<Vec<f32>> {
        if f_motion.dim() != self.head.in_features {
            return Err(Error::DimensionMismatch { expected: self.head.in_features, found: f_motion.dim() });
        }
        Ok(self.head.apply_rows(1, f_motion.values()))
    }

    /// Per-view features of a clip under the centre test protocol.
    pub fn view_features(&self, clip: &MvClip, n_views: usize, crop_size: usize) -> Result<Vec<FeatureVector>> {
        let idx = sample_test_indices(clip.len(), n_views)?;
        let views = idx.iter().map(|&t| eval_view(&clip.frames[t], crop_size)).collect::<Result<Vec<_>>>()?;
        self.extract_segment_features(&views)
    }

    /// Training forward over `[B * S, 2, H, W]` laid out clip-major: the
    /// S segment features of each clip are averaged before the head.
    pub fn forward_train(&mut self, frames: &Tensor, segments: usize, rng: &mut dyn RngCore) -> Tensor {
        let x = self.input_norm.forward(frames, rng);
        let feats = self.backbone.forward(&x, rng);
        let (bs, d) = feats.dims2();
        assert_eq!(bs % segments, 0, "batch is not a whole number of clips");
        let b = bs / segments;
        let mut pooled = vec![0.0f32; b * d];
        for (i, row) in pooled.chunks_mut(d).enumerate() {
            for s in 0..segments {
                row.iter_mut().zip(feats.row(i * segments + s)).for_each(|(a, v)| *a += v);
            }
            row.iter_mut().for_each(|a| *a /= segments as f32);
        }
        self.train_segments = segments;
        self.head.forward(&Tensor::from_vec(&[b, d], pooled).unwrap(), rng)
    }

    pub fn backward_train(&mut self, grad_logits: &Tensor) {
        let g = self.head.backward(grad_logits);
        let (b, d) = g.dims2();
        let s = self.train_segments;
        let mut expanded = Vec::with_capacity(b * s * d);
        for i in 0..b {
            for _ in 0..s {
                expanded.extend(g.row(i).iter().map(|v| v / s as f32));
            }
        }
        let g = self.backbone.backward(&Tensor::from_vec(&[b * s, d], expanded).unwrap());
        self.input_norm.backward(&g);
    }

    /// Backbone description without the classifier.
    pub fn describe_backbone(&self) -> Vec<LayerSpec> {
        let mut d = self.input_norm.describe();
        d.extend(self.backbone.describe());
        d
    }

    pub fn describe(&self) -> Vec<LayerSpec> {
        let mut d = self.describe_backbone();
        d.extend(self.head.describe());
        d
    }

    /// Freezes or unfreezes everything except the linear classifier.
    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        self.input_norm.set_frozen(frozen);
        self.backbone.set_frozen(frozen);
    }

    /// Digest of the input normalisation and backbone, buffers included.
    pub fn backbone_checksum(&self) -> u64 {
        BackboneView(self).param_checksum()
    }
}

struct BackboneView<'a>(&'a MotionModel);

impl Parameterized for BackboneView<'_> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.0.input_norm.visit_params(&join(prefix, "input_norm"), f);
        self.0.backbone.visit_params(&join(prefix, "backbone"), f);
    }

    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {
        unreachable!("read-only view")
    }
}

impl Parameterized for MotionModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.input_norm.visit_params(&join(prefix, "input_norm"), f);
        self.backbone.visit_params(&join(prefix, "backbone"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.input_norm.visit_params_mut(&join(prefix, "input_norm"), f);
        self.backbone.visit_params_mut(&join(prefix, "backbone"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

/// Counts parameters that an optimiser would update.
pub fn count_trainable_params(model: &dyn Parameterized) -> usize {
    model.trainable_param_count()
}

/// Where training and evaluation fetch MV clips from.
pub trait ClipSource: Sync {
    fn load_clip(&self, entry: &ManifestEntry) -> Result<MvClip>;
}

impl ClipSource for DatasetLayout {
    fn load_clip(&self, entry: &ManifestEntry) -> Result<MvClip> {
        DatasetLayout::load_clip(self, entry)
    }
}

impl ClipSource for SyntheticDataset {
    fn load_clip(&self, entry: &ManifestEntry) -> Result<MvClip> {
        self.video(&entry.video_id).map(|v| v.clip.clone()).ok_or_else(|| Error::MissingVideo(entry.video_id.clone()))
    }
}

pub const MV_CHECKPOINT_FORMAT: &str = "mvfuse-mv";

/// Metadata stored beside MV checkpoint weights.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MvCheckpointMeta {
    pub class_names: Vec<String>,
    pub backbone: EfficientNetConfig,
    pub train: crate::config::TrainConfig,
    pub epoch: usize,
    pub best_metric: f64,
    pub metric_name: String,
}

pub fn save_mv_checkpoint(path: &Path, model: &MotionModel, meta: &MvCheckpointMeta) -> Result<()> {
    let tensors = mvfuse_nn::state::state_dict(model, "");
    crate::checkpoint::save_checkpoint(path, MV_CHECKPOINT_FORMAT, &tensors, meta)
}

pub fn load_mv_checkpoint(path: &Path) -> Result<(MotionModel, MvCheckpointMeta)> {
    let (tensors, meta): (_, MvCheckpointMeta) = crate::checkpoint::load_checkpoint(path, MV_CHECKPOINT_FORMAT)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut model = MotionModel::with_config(meta.backbone.clone(), meta.class_names.len(), &mut rng);
    mvfuse_nn::state::load_state_dict(&mut model, "", &tensors)?;
    Ok((model, meta))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use mvfuse_nn::efficientnet::StageConfig;
    use mvfuse_nn::layers::Conv2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two-stage, narrow backbone for fast tests.
    pub(crate) fn tiny_config() -> EfficientNetConfig {
        let s = |expand_ratio, kernel, stride, in_channels, out_channels, layers| StageConfig {
            expand_ratio,
            kernel,
            stride,
            in_channels,
            out_channels,
            layers,
        };
        EfficientNetConfig {
            in_channels: 2,
            stem_channels: 8,
            stages: vec![s(1, 3, 1, 8, 8, 1), s(4, 3, 2, 8, 16, 2)],
            head_channels: 1280,
            stochastic_depth: 0.0,
        }
    }

    pub(crate) fn tiny_model(classes: usize, seed: u64) -> MotionModel {
        MotionModel::with_config(tiny_config(), classes, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn frame(seed: u64, size: usize) -> NormalizedMvFrame {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..2 * size * size).map(|_| rng.random_range(-20i32..=20) as f32).collect();
        let f = crate::dataset_io::MvFrame::new(size, size, data).unwrap();
        crate::mv_transforms::normalize_mv(&f)
    }

    #[test]
    fn adapt_stem_equal_slices_scale_by_three_halves() {
        let a = [0.25f32, -1.0, 2.0, 0.5];
        let w = Tensor::from_vec(&[1, 3, 2, 2], a.repeat(3)).unwrap();
        let out = adapt_stem(&w).unwrap();
        assert_eq!(out.shape(), [1, 2, 2, 2]);
        let expect: Vec<f32> = a.iter().map(|v| v * 1.5).collect();
        assert_eq!(out.data(), [expect.clone(), expect].concat());
        assert!(adapt_stem(&Tensor::zeros(&[4, 3, 3, 3])).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(adapt_stem(&Tensor::zeros(&[4, 2, 3, 3])).is_err());
    }

    #[test]
    fn adapt_stem_preserves_constant_input_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv3 = Conv2d::new(3, 6, 3, 1, 0, 1, false, &mut rng);
        let mut conv2 = Conv2d::new(2, 6, 3, 1, 0, 1, false, &mut rng);
        conv2.weight.value = adapt_stem(&conv3.weight.value).unwrap();
        let c = 0.37f32;
        let y3 = conv3.infer(&Tensor::full(&[1, 3, 5, 5], c));
        let y2 = conv2.infer(&Tensor::full(&[1, 2, 5, 5], c));
        for (a, b) in y3.data().iter().zip(y2.data()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn aggregate_contracts() {
        let v = FeatureVector::new(FeatureKind::Motion, (0..1280).map(|i| i as f32 * 0.01 - 3.0).collect()).unwrap();
        let neg = FeatureVector::new(FeatureKind::Motion, v.values().iter().map(|x| -x).collect()).unwrap();
        assert_eq!(aggregate_segments(std::slice::from_ref(&v)).unwrap(), v);
        assert!(aggregate_segments(&[v.clone(), neg]).unwrap().values().iter().all(|&x| x == 0.0));
        assert_eq!(aggregate_segments(&[v.clone(), v.clone(), v.clone()]).unwrap(), v);
        assert!(aggregate_segments(&[]).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn aggregate_is_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f32..1e3, 1280), 1..6),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let feats: Vec<_> = rows.into_iter().map(|r| FeatureVector::new(FeatureKind::Motion, r).unwrap()).collect();
            let mut shuffled = feats.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_segments(&feats).unwrap();
            let b = aggregate_segments(&shuffled).unwrap();
            proptest::prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn mv_head_contracts() {
        let mut m = tiny_model(101, 1);
        assert_eq!(count_trainable_params(&m.head), 129_381);
        m.head.weight.value.fill(0.5);
        let zero = FeatureVector::zeros(FeatureKind::Motion);
        let logits = m.mv_only_logits(&zero).unwrap();
        assert_eq!(logits, vec![0.0; 101]);
        let wrong = FeatureVector::zeros(FeatureKind::Appearance);
        assert!(matches!(m.mv_only_logits(&wrong), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn full_model_parameter_count() {
        let m = MotionModel::new(101, &mut ChaCha8Rng::seed_from_u64(0));
        // torchvision efficientnet_b0 features with a 2-channel stem (4,007,260),
        // 2-channel input BN (4) and a 1280x101 classifier (129,381).
        assert_eq!(count_trainable_params(&m), 4_136_645);
        assert_eq!(mvfuse_nn::arch::total_params(&m.describe()), 4_136_645);
        let mut frozen = m;
        frozen.set_frozen(true);
        assert_eq!(count_trainable_params(&frozen), 0);
    }

    #[test]
    fn segment_features_are_deterministic_and_batch_independent() {
        let m = tiny_model(4, 2);
        let frames: Vec<_> = (0..5).map(|i| frame(i, 32)).collect();
        let batch = m.extract_segment_features(&frames).unwrap();
        assert!(batch.iter().all(|f| f.dim() == 1280 && f.values().iter().all(|v| v.is_finite())));
        for (f, fr) in batch.iter().zip(&frames) {
            let single = m.extract_segment_feature(fr).unwrap();
            assert!(single.values().iter().zip(f.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_ne!(batch[0], batch[1]);
    }

    #[test]
    fn full_b0_accepts_224_frames() {
        let m = MotionModel::new(101, &mut ChaCha8Rng::seed_from_u64(5));
        let f = m.extract_segment_feature(&frame(9, 224)).unwrap();
        assert_eq!(f.dim(), 1280);
        assert!(f.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn segment_mean_backward_matches_finite_differences() {
        use mvfuse_nn::loss::cross_entropy;
        let mut m = tiny_model(3, 4);
        let frames: Vec<_> = (0..4).map(|i| frame(10 + i, 16)).collect();
        let x = frames_to_tensor(&frames).unwrap();
        let labels = [2usize, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = m.forward_train(&x, 2, &mut rng);
        let (_, g) = cross_entropy(&logits, &labels);
        m.zero_grad();
        m.backward_train(&g);
        let analytic = m.head.bias.as_ref().unwrap().grad.data().to_vec();
        for (j, &expected) in analytic.iter().enumerate() {
            let eps = 1e-2f32;
            let mut loss_at = |delta: f32| {
                m.head.bias.as_mut().unwrap().value.data_mut()[j] += delta;
                let l = cross_entropy(&m.forward_train(&x, 2, &mut rng), &labels).0;
                m.head.bias.as_mut().unwrap().value.data_mut()[j] -= delta;
                l
            };
            let numeric = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            assert!((numeric - expected).abs() < 1e-3, "{numeric} vs {expected}");
        }
    }

    #[test]
    fn checkpoint_round_trip_gives_identical_logits() {
        let m = tiny_model(4, 8);
        let meta = MvCheckpointMeta {
            class_names: (0..4).map(|i| format!("c{i}")).collect(),
            backbone: tiny_config(),
            train: crate::config::TrainConfig::mv_only(),
            epoch: 3,
            best_metric: 0.5,
            metric_name: "val_top1".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mv.safetensors");
        save_mv_checkpoint(&path, &m, &meta).unwrap();
        let (back, meta2) = load_mv_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.param_checksum(), m.param_checksum());
        let fr = frame(1, 32);
        let a = m.mv_only_logits(&m.extract_segment_feature(&fr).unwrap()).unwrap();
        let b = back.mv_only_logits(&back.extract_segment_feature(&fr).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
