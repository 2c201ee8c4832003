//! Late fusion: appearance and motion features concatenated into one
//! vector and classified by a small MLP trained with both extractors frozen.

use crate::config::{Stage, TrainConfig};
use crate::dataset_io::cache::{APPEARANCE_DIM, FUSED_DIM, MOTION_DIM};
use crate::dataset_io::{FeatureCache, FeatureKind, FeatureVector, SplitManifest};
use crate::error::{Error, Result};
use crate::motion::train::{augment_clip, check_labels, epoch_order, example_rng, step_rng};
use crate::motion::{aggregate_segments, ClipSource, MotionModel};
use mvfuse_nn::arch::LayerSpec;
use mvfuse_nn::layers::{Activation, ActivationKind, Dropout, Linear, Module};
use mvfuse_nn::loss::{argmax, cross_entropy};
use mvfuse_nn::param::{join, Param};
use mvfuse_nn::{par, Parameterized, Tensor};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const HIDDEN_DIM: usize = 512;
pub const DROPOUT: f32 = 0.5;
/// Layout of the fused vector, recorded in checkpoints.
pub const FUSED_LAYOUT: &str = "appearance[0,512) motion[512,1792)";

/// `[f_app ; f_motion]` with no rescaling.
pub fn fuse(f_app: &FeatureVector, f_motion: &FeatureVector) -> Result<FeatureVector> {
    if f_app.dim() != APPEARANCE_DIM {
        return Err(Error::DimensionMismatch { expected: APPEARANCE_DIM, found: f_app.dim() });
    }
    if f_motion.dim() != MOTION_DIM {
        return Err(Error::DimensionMismatch { expected: MOTION_DIM, found: f_motion.dim() });
    }
    let mut v = Vec::with_capacity(FUSED_DIM);
    v.extend_from_slice(f_app.values());
    v.extend_from_slice(f_motion.values());
    FeatureVector::new(FeatureKind::Fused, v)
}

/// Inverse of [`fuse`].
pub fn split(f: &FeatureVector) -> Result<(FeatureVector, FeatureVector)> {
    if f.dim() != FUSED_DIM {
        return Err(Error::DimensionMismatch { expected: FUSED_DIM, found: f.dim() });
    }
    let (a, m) = f.values().split_at(APPEARANCE_DIM);
    Ok((FeatureVector::new(FeatureKind::Appearance, a.to_vec())?, FeatureVector::new(FeatureKind::Motion, m.to_vec())?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `Linear(1792, 512) -> ReLU -> Dropout(0.5) -> Linear(512, C)`, named
/// like an indexed sequential container (`0.*`, `3.*`). The final bias
/// starts at zero.
pub struct FusionHead {
    fc1: Linear,
    act: Activation,
    drop: Dropout,
    fc2: Linear,
}

impl FusionHead {
    pub fn new(num_classes: usize, rng: &mut dyn RngCore) -> Self {
        let fc1 = Linear::new(FUSED_DIM, HIDDEN_DIM, true, rng);
        let mut fc2 = Linear::new(HIDDEN_DIM, num_classes, true, rng);
        if let Some(b) = fc2.bias.as_mut() {
            b.value.fill(0.0);
        }
        Self { fc1, act: Activation::new(ActivationKind::Relu), drop: Dropout::new(DROPOUT), fc2 }
    }

    pub fn num_classes(&self) -> usize {
        self.fc2.out_features
    }

    pub fn describe_for(num_classes: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Linear { in_features: FUSED_DIM, out_features: HIDDEN_DIM, bias: true },
            LayerSpec::Activation(ActivationKind::Relu),
            LayerSpec::Dropout { p: DROPOUT },
            LayerSpec::Linear { in_features: HIDDEN_DIM, out_features: num_classes, bias: true },
        ]
    }

    /// Logits for one fused vector. Evaluation mode ignores `rng`.
    pub fn head_forward(&mut self, f: &FeatureVector, mode: Mode, rng: &mut dyn RngCore) -> Result<Vec<f32>> {
        if f.dim() != FUSED_DIM {
            return Err(Error::DimensionMismatch { expected: FUSED_DIM, found: f.dim() });
        }
        let x = Tensor::from_vec(&[1, FUSED_DIM], f.values().to_vec())?;
        Ok(match mode {
            Mode::Eval => self.infer(&x),
            Mode::Train => self.forward(&x, rng),
        }
        .into_data())
    }

    /// Evaluation-mode logits for a batch of fused rows.
    pub fn logits(&self, rows: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut data = Vec::with_capacity(rows.len() * FUSED_DIM);
        for r in rows {
            if r.len() != FUSED_DIM {
                return Err(Error::DimensionMismatch { expected: FUSED_DIM, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        let y = self.infer(&Tensor::from_vec(&[rows.len(), FUSED_DIM], data)?);
        Ok((0..rows.len()).map(|i| y.row(i).to_vec()).collect())
    }
}

impl Module for FusionHead {
    fn infer(&self, x: &Tensor) -> Tensor {
        self.fc2.infer(&self.drop.infer(&self.act.infer(&self.fc1.infer(x))))
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let h = self.fc1.forward(x, rng);
        let h = self.act.forward(&h, rng);
        let h = self.drop.forward(&h, rng);
        self.fc2.forward(&h, rng)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.fc2.backward(grad);
        let g = self.drop.backward(&g);
        let g = self.act.backward(&g);
        self.fc1.backward(&g)
    }

    fn describe(&self) -> Vec<LayerSpec> {
        Self::describe_for(self.num_classes())
    }
}

impl Parameterized for FusionHead {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit_params(&join(prefix, "0"), f);
        self.fc2.visit_params(&join(prefix, "3"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_params_mut(&join(prefix, "0"), f);
        self.fc2.visit_params_mut(&join(prefix, "3"), f);
    }
}

/// Frozen inputs of head training.
pub struct FrozenInputs<'a> {
    pub appearance: &'a FeatureCache,
    pub motion: &'a MotionModel,
    pub source: &'a dyn ClipSource,
    /// Pre-computed segment-averaged motion features. When present, clips
    /// are not decoded and no temporal or spatial augmentation applies.
    pub motion_cache: Option<&'a FeatureCache>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionEpochLog {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f64,
    pub train_top1: f64,
}

pub struct FusionTrainOutcome {
    pub head: FusionHead,
    pub history: Vec<FusionEpochLog>,
    pub steps: usize,
    /// Digest of the appearance cache, identical before and after training.
    pub appearance_digest: String,
    /// Checksum of the MV model, identical before and after training.
    pub motion_checksum: u64,
}

fn digest_u64(hex_digest: &str) -> u64 {
    u64::from_str_radix(&hex_digest[..16], 16).unwrap_or(0)
}

/// Motion feature of one training example: cached, or a fresh 3-segment
/// augmented sample through the frozen backbone in evaluation mode.
fn motion_feature(
    inputs: &FrozenInputs<'_>,
    train: &SplitManifest,
    i: usize,
    cfg: &TrainConfig,
    epoch: usize,
    pos: usize,
) -> Result<FeatureVector> {
    let entry = &train.entries[i];
    if let Some(cache) = inputs.motion_cache {
        return Ok(cache.require(&entry.video_id)?.feature.clone());
    }
    let clip = inputs.source.load_clip(entry)?;
    let frames = augment_clip(&clip, cfg, &mut example_rng(cfg.seed, epoch, pos))?;
    aggregate_segments(&inputs.motion.extract_segment_features(&frames)?)
}

/// Trains only the fusion head. The MV model and the appearance cache are
/// checksummed before and after; any difference is a hard error.
pub fn train_fusion_head(
    mut head: FusionHead,
    inputs: &FrozenInputs<'_>,
    train: &SplitManifest,
    config: &TrainConfig,
) -> Result<FusionTrainOutcome> {
    config.validate()?;
    if config.stage != Stage::Fusion {
        return Err(Error::Config("train_fusion_head needs stage = fusion".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    check_labels(train, head.num_classes())?;
    if inputs.appearance.kind != FeatureKind::Appearance {
        return Err(Error::DimensionMismatch { expected: APPEARANCE_DIM, found: inputs.appearance.kind.dim() });
    }
    if let Some(c) = inputs.motion_cache {
        if c.kind != FeatureKind::Motion {
            return Err(Error::DimensionMismatch { expected: MOTION_DIM, found: c.kind.dim() });
        }
    }
    for e in &train.entries {
        inputs.appearance.require(&e.video_id)?;
        if let Some(c) = inputs.motion_cache {
            c.require(&e.video_id)?;
        }
    }

    let app_before = inputs.appearance.digest()?;
    let motion_before = inputs.motion.param_checksum();

    let mut opt = config.optimizer();
    let mut history = Vec::new();
    let mut step = 0usize;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);
    for epoch in 0..config.epochs {
        if step >= max_steps {
            break;
        }
        opt.lr = config.lr_at(epoch);
        let order = epoch_order(config.seed, epoch, train.len());
        let (mut loss_sum, mut seen, mut correct) = (0.0f64, 0usize, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            if step >= max_steps {
                break;
            }
            let fused = par::map_slice(batch, |j, &i| {
                let m = motion_feature(inputs, train, i, config, epoch, b * config.batch_size + j)?;
                fuse(&inputs.appearance.require(&train.entries[i].video_id)?.feature, &m)
            });
            let mut data = Vec::with_capacity(batch.len() * FUSED_DIM);
            for f in fused {
                data.extend_from_slice(f?.values());
            }
            let x = Tensor::from_vec(&[batch.len(), FUSED_DIM], data)?;
            let labels: Vec<usize> = batch.iter().map(|&i| train.entries[i].label).collect();

            head.zero_grad();
            let logits = head.forward(&x, &mut step_rng(config.seed, step));
            let (loss, grad) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            head.backward(&grad);
            opt.step(&mut head);

            loss_sum += loss as f64 * labels.len() as f64;
            seen += labels.len();
            correct += labels.iter().enumerate().filter(|(r, &y)| argmax(logits.row(*r)) == y).count();
            step += 1;
        }
        let log = FusionEpochLog {
            epoch,
            lr: opt.lr,
            mean_loss: loss_sum / seen as f64,
            train_top1: correct as f64 / seen as f64,
        };
        log::info!("fusion epoch {epoch}: loss {:.4} train {:.3}", log.mean_loss, log.train_top1);
        history.push(log);
    }

    let app_after = inputs.appearance.digest()?;
    if app_after != app_before {
        return Err(Error::FrozenChanged {
            component: "appearance cache".into(),
            before: digest_u64(&app_before),
            after: digest_u64(&app_after),
        });
    }
    let motion_after = inputs.motion.param_checksum();
    if motion_after != motion_before {
        return Err(Error::FrozenChanged {
            component: "motion backbone".into(),
            before: motion_before,
            after: motion_after,
        });
    }
    Ok(FusionTrainOutcome { head, history, steps: step, appearance_digest: app_after, motion_checksum: motion_after })
}

/// Precomputes segment-averaged motion features (centre views) for a
/// manifest, e.g. to speed up head training.
pub fn motion_feature_records(
    model: &MotionModel,
    manifest: &SplitManifest,
    source: &dyn ClipSource,
    segments: usize,
    crop_size: usize,
) -> Result<Vec<crate::dataset_io::FeatureRecord>> {
    par::map_slice(&manifest.entries, |_, e| {
        let clip = source.load_clip(e)?;
        let feature = aggregate_segments(&model.view_features(&clip, segments, crop_size)?)?;
        Ok(crate::dataset_io::FeatureRecord { video_id: e.video_id.clone(), label: e.label, feature })
    })
    .into_iter()
    .collect()
}

pub const FUSION_CHECKPOINT_FORMAT: &str = "mvfuse-fusion";

/// A file a checkpoint was trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.display().to_string(), sha256: crate::checkpoint::file_sha256(path)? })
    }

    /// Errors if the file's content no longer matches.
    pub fn verify(&self) -> Result<()> {
        let path = Path::new(&self.path);
        let now = crate::checkpoint::file_sha256(path)?;
        if now != self.sha256 {
            return Err(Error::FrozenChanged {
                component: self.path.clone(),
                before: digest_u64(&self.sha256),
                after: digest_u64(&now),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionCheckpointMeta {
    pub class_names: Vec<String>,
    pub layout: String,
    pub train: TrainConfig,
    pub epochs_run: usize,
    pub appearance_cache: Option<FileRef>,
    pub mv_checkpoint: Option<FileRef>,
    /// Hex SHA-256 of the appearance cache contents used in training.
    pub appearance_digest: String,
    /// Parameter checksum of the frozen MV model, as 16 hex digits.
    pub motion_checksum: String,
}

pub fn save_fusion_checkpoint(path: &Path, head: &FusionHead, meta: &FusionCheckpointMeta) -> Result<()> {
    let tensors = mvfuse_nn::state::state_dict(head, "");
    crate::checkpoint::save_checkpoint(path, FUSION_CHECKPOINT_FORMAT, &tensors, meta)
}

pub fn load_fusion_checkpoint(path: &Path) -> Result<(FusionHead, FusionCheckpointMeta)> {
    let (tensors, meta): (_, FusionCheckpointMeta) =
        crate::checkpoint::load_checkpoint(path, FUSION_CHECKPOINT_FORMAT)?;
    if meta.layout != FUSED_LAYOUT {
        return Err(Error::Malformed { path: path.to_path_buf(), detail: format!("unknown layout `{}`", meta.layout) });
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut head = FusionHead::new(meta.class_names.len(), &mut rng);
    mvfuse_nn::state::load_state_dict(&mut head, "", &tensors)?;
    Ok((head, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::synth::{generate_synthetic_dataset, SynthConfig};
    use crate::dataset_io::FeatureRecord;
    use crate::motion::tests::tiny_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(kind: FeatureKind, i: usize) -> FeatureVector {
        let mut v = vec![0.0; kind.dim()];
        v[i] = 1.0;
        FeatureVector::new(kind, v).unwrap()
    }

    #[test]
    fn fuse_contracts() {
        let z =
            fuse(&FeatureVector::zeros(FeatureKind::Appearance), &FeatureVector::zeros(FeatureKind::Motion)).unwrap();
        assert_eq!((z.dim(), z.kind()), (1792, FeatureKind::Fused));
        assert!(z.values().iter().all(|&v| v == 0.0));
        let f = fuse(&basis(FeatureKind::Appearance, 0), &basis(FeatureKind::Motion, 0)).unwrap();
        let ones: Vec<usize> = f.values().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(ones, [0, 512]);
        assert!(fuse(&FeatureVector::zeros(FeatureKind::Motion), &FeatureVector::zeros(FeatureKind::Motion)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn fuse_then_split_is_identity(
            a in proptest::collection::vec(proptest::num::f32::ANY, 512),
            m in proptest::collection::vec(proptest::num::f32::ANY, 1280),
        ) {
            let fa = FeatureVector::new(FeatureKind::Appearance, a).unwrap();
            let fm = FeatureVector::new(FeatureKind::Motion, m).unwrap();
            let (a2, m2) = split(&fuse(&fa, &fm).unwrap()).unwrap();
            let bits = |v: &FeatureVector| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            proptest::prop_assert_eq!(bits(&a2), bits(&fa));
            proptest::prop_assert_eq!(bits(&m2), bits(&fm));
        }
    }

    #[test]
    fn head_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = FusionHead::new(101, &mut rng);
        assert_eq!(head.trainable_param_count(), 969_829);
        assert_eq!(mvfuse_nn::arch::total_params(&head.describe()), 969_829);
        let names: Vec<String> = {
            let mut v = Vec::new();
            head.visit_params("", &mut |n, _| v.push(n.to_string()));
            v
        };
        assert_eq!(names, ["0.weight", "0.bias", "3.weight", "3.bias"]);
        let zero = FeatureVector::zeros(FeatureKind::Fused);
        head.fc1.bias.as_mut().unwrap().value.fill(0.0);
        assert_eq!(head.head_forward(&zero, Mode::Eval, &mut rng).unwrap(), vec![0.0; 101]);
        let x = FeatureVector::new(FeatureKind::Fused, (0..1792).map(|i| (i % 13) as f32 * 0.1).collect()).unwrap();
        let a = head.head_forward(&x, Mode::Eval, &mut rng).unwrap();
        let b = head.head_forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        let t = head.head_forward(&x, Mode::Train, &mut rng).unwrap();
        assert_ne!(a, t);
        assert!(head.head_forward(&FeatureVector::zeros(FeatureKind::Motion), Mode::Eval, &mut rng).is_err());
    }

    fn appearance_cache(ds: &crate::dataset_io::SyntheticDataset) -> FeatureCache {
        let recs = ds
            .train
            .entries
            .iter()
            .chain(&ds.test.entries)
            .map(|e| FeatureRecord {
                video_id: e.video_id.clone(),
                label: e.label,
                feature: basis(FeatureKind::Appearance, ds.video(&e.video_id).unwrap().signature.appearance),
            })
            .collect();
        FeatureCache::new(FeatureKind::Appearance, recs).unwrap()
    }

    fn fusion_config(seed: u64) -> TrainConfig {
        TrainConfig { epochs: 3, batch_size: 8, crop_size: 32, lr: 1e-3, seed, ..TrainConfig::fusion() }
    }

    #[test]
    fn head_training_is_deterministic_and_leaves_inputs_frozen() {
        let ds =
            generate_synthetic_dataset(&SynthConfig { per_class: 2, test_per_class: 1, ..Default::default() }).unwrap();
        let mv = tiny_model(4, 3);
        let app = appearance_cache(&ds);
        let inputs = FrozenInputs { appearance: &app, motion: &mv, source: &ds, motion_cache: None };
        let before = (mv.param_checksum(), app.digest().unwrap());
        let head = |s| FusionHead::new(4, &mut ChaCha8Rng::seed_from_u64(s));
        let a = train_fusion_head(head(1), &inputs, &ds.train, &fusion_config(5)).unwrap();
        let b = train_fusion_head(head(1), &inputs, &ds.train, &fusion_config(5)).unwrap();
        assert_eq!(a.head.param_checksum(), b.head.param_checksum());
        assert_ne!(a.head.param_checksum(), head(1).param_checksum());
        assert_eq!((mv.param_checksum(), app.digest().unwrap()), before);
        assert_eq!((a.motion_checksum, a.appearance_digest.clone()), before);
        assert_eq!(a.steps, 3);
    }

    #[test]
    fn cached_motion_features_are_deterministic() {
        let ds =
            generate_synthetic_dataset(&SynthConfig { per_class: 2, test_per_class: 1, ..Default::default() }).unwrap();
        let mv = tiny_model(4, 3);
        let r1 = motion_feature_records(&mv, &ds.train, &ds, 3, 32).unwrap();
        let r2 = motion_feature_records(&mv, &ds.train, &ds, 3, 32).unwrap();
        assert_eq!(r1, r2);
        let cache = FeatureCache::new(FeatureKind::Motion, r1).unwrap();
        let app = appearance_cache(&ds);
        let inputs = FrozenInputs { appearance: &app, motion: &mv, source: &ds, motion_cache: Some(&cache) };
        let head = |s| FusionHead::new(4, &mut ChaCha8Rng::seed_from_u64(s));
        let out = train_fusion_head(head(1), &inputs, &ds.train, &fusion_config(1)).unwrap();
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn cache_miss_is_reported() {
        let ds =
            generate_synthetic_dataset(&SynthConfig { per_class: 2, test_per_class: 1, ..Default::default() }).unwrap();
        let mv = tiny_model(4, 3);
        let mut app = appearance_cache(&ds);
        app = FeatureCache::new(FeatureKind::Appearance, app.records[1..].to_vec()).unwrap();
        let inputs = FrozenInputs { appearance: &app, motion: &mv, source: &ds, motion_cache: None };
        let head = FusionHead::new(4, &mut ChaCha8Rng::seed_from_u64(0));
        let err = train_fusion_head(head, &inputs, &ds.train, &fusion_config(1)).err().unwrap();
        assert!(matches!(err, Error::CacheMiss(_)), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_and_references() {
        let dir = tempfile::tempdir().unwrap();
        let referenced = dir.path().join("app.mclf");
        std::fs::write(&referenced, b"cache bytes").unwrap();
        let head = FusionHead::new(4, &mut ChaCha8Rng::seed_from_u64(9));
        let meta = FusionCheckpointMeta {
            class_names: (0..4).map(|i| format!("c{i}")).collect(),
            layout: FUSED_LAYOUT.into(),
            train: TrainConfig::fusion(),
            epochs_run: 50,
            appearance_cache: Some(FileRef::of(&referenced).unwrap()),
            mv_checkpoint: None,
            appearance_digest: "00".repeat(32),
            motion_checksum: format!("{:016x}", 7),
        };
        let path = dir.path().join("fusion.safetensors");
        save_fusion_checkpoint(&path, &head, &meta).unwrap();
        let (back, meta2) = load_fusion_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back.param_checksum(), head.param_checksum());
        meta2.appearance_cache.as_ref().unwrap().verify().unwrap();
        std::fs::write(&referenced, b"changed").unwrap();
        assert!(matches!(meta2.appearance_cache.unwrap().verify(), Err(Error::FrozenChanged { .. })));
    }
}
