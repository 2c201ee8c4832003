use super::{frames_to_tensor, mean_rows, ClipSource, MotionModel};
use crate::config::{Stage, TrainConfig};
use crate::dataset_io::synth::derive_seed;
use crate::dataset_io::SplitManifest;
use crate::error::{Error, Result};
use crate::mv_transforms::{ClipAugment, NormalizedMvFrame};
use crate::temporal_sampler::sample_train_indices;
use mvfuse_nn::loss::{argmax, cross_entropy, softmax};
use mvfuse_nn::{par, Parameterized, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;

const TAG_SHUFFLE: u64 = 1;
const TAG_AUGMENT: u64 = 2;
const TAG_STEP: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f32,
    pub steps: usize,
    pub mean_loss: f64,
    /// Accuracy on the augmented training batches seen this epoch.
    pub train_top1: f64,
    pub val_top1: Option<f64>,
}

pub struct MvTrainOutcome {
    /// Weights of the selected epoch.
    pub model: MotionModel,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// `val_top1` when a validation split was given, else `train_top1`.
    pub metric_name: String,
    pub steps: usize,
}

/// Draws segment indices and one shared crop/flip for a training clip.
pub(crate) fn augment_clip(
    clip: &crate::dataset_io::MvClip,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NormalizedMvFrame>> {
    let idx = sample_train_indices(clip.len(), config.segments, rng)?;
    let (h, w) = clip.dims();
    let aug = ClipAugment::sample(h, w, config.flip_prob, rng);
    idx.iter().map(|&t| aug.apply(&clip.frames[t], config.crop_size)).collect()
}

/// Per-example generator keyed by epoch and position, so batches do not
/// depend on how many workers prepared them.
pub(crate) fn example_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_AUGMENT, epoch as u64, position as u64]))
}

pub(crate) fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_SHUFFLE, epoch as u64])));
    order
}

pub(crate) fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_STEP, step as u64]))
}

pub(crate) fn check_labels(manifest: &SplitManifest, classes: usize) -> Result<()> {
    match manifest.entries.iter().find(|e| e.label >= classes) {
        Some(e) => Err(Error::InvalidArgument(format!("video `{}` has label {} >= {classes}", e.video_id, e.label))),
        None => Ok(()),
    }
}

/// Top-1 of the MV-only classifier under a centre view protocol.
fn validation_top1(
    model: &MotionModel,
    manifest: &SplitManifest,
    source: &dyn ClipSource,
    views: usize,
    crop: usize,
) -> Result<f64> {
    let hits = par::map_slice(&manifest.entries, |_, e| -> Result<bool> {
        let clip = source.load_clip(e)?;
        let probs: Vec<Vec<f32>> = model
            .view_features(&clip, views, crop)?
            .iter()
            .map(|f| model.mv_only_logits(f).map(|l| softmax(&l)))
            .collect::<Result<_>>()?;
        let rows: Vec<&[f32]> = probs.iter().map(Vec::as_slice).collect();
        Ok(argmax(&mean_rows(&rows)) == e.label)
    });
    let mut correct = 0usize;
    for h in hits {
        correct += h? as usize;
    }
    Ok(correct as f64 / manifest.len() as f64)
}

/// Trains backbone and linear head with cross-entropy on segment-averaged
/// features and returns the weights of the best validation epoch (or the
/// last epoch without a validation split).
pub fn train_mv_classifier(
    mut model: MotionModel,
    train: &SplitManifest,
    val: Option<&SplitManifest>,
    source: &dyn ClipSource,
    config: &TrainConfig,
) -> Result<MvTrainOutcome> {
    config.validate()?;
    if config.stage != Stage::MvOnly {
        return Err(Error::Config("train_mv_classifier needs stage = mv-only".into()));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    check_labels(train, model.num_classes())?;
    if let Some(v) = val {
        check_labels(v, model.num_classes())?;
    }

    let mut opt = config.optimizer();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    let mut step = 0usize;
    let max_steps = config.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..config.epochs {
        if step >= max_steps {
            break;
        }
        opt.lr = config.lr_at(epoch);
        let order = epoch_order(config.seed, epoch, train.len());
        let (mut loss_sum, mut seen, mut correct, mut epoch_steps) = (0.0f64, 0usize, 0usize, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            if step >= max_steps {
                break;
            }
            let prepared = par::map_slice(batch, |j, &i| {
                let clip = source.load_clip(&train.entries[i])?;
                augment_clip(&clip, config, &mut example_rng(config.seed, epoch, b * config.batch_size + j))
            });
            let frames: Vec<NormalizedMvFrame> =
                prepared.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.entries[i].label).collect();

            model.zero_grad();
            let logits =
                model.forward_train(&frames_to_tensor(&frames)?, config.segments, &mut step_rng(config.seed, step));
            let (loss, grad) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            model.backward_train(&grad);
            opt.step(&mut model);

            loss_sum += loss as f64 * labels.len() as f64;
            seen += labels.len();
            correct += labels.iter().enumerate().filter(|(r, &y)| argmax(logits.row(*r)) == y).count();
            step += 1;
            epoch_steps += 1;
        }

        let train_top1 = correct as f64 / seen as f64;
        let val_top1 = match val {
            Some(v) => Some(validation_top1(&model, v, source, config.val_segments, config.crop_size)?),
            None => None,
        };
        let log =
            EpochLog { epoch, lr: opt.lr, steps: epoch_steps, mean_loss: loss_sum / seen as f64, train_top1, val_top1 };
        log::info!(
            "mv epoch {epoch}: loss {:.4} train {:.3} val {:?} lr {:.1e}",
            log.mean_loss,
            train_top1,
            val_top1,
            opt.lr
        );
        history.push(log);

        let improved = match (&best, val_top1) {
            (None, _) | (Some(_), None) => true,
            (Some((m, _, _)), Some(v)) => v > *m,
        };
        if improved {
            let metric = val_top1.unwrap_or(train_top1);
            best = Some((metric, epoch, mvfuse_nn::state::state_dict(&model, "")));
        }
    }

    let (best_metric, best_epoch, weights) = best.expect("at least one epoch ran");
    mvfuse_nn::state::load_state_dict(&mut model, "", &weights)?;
    Ok(MvTrainOutcome {
        model,
        history,
        best_epoch,
        best_metric,
        metric_name: if val.is_some() { "val_top1" } else { "train_top1" }.into(),
        steps: step,
    })
}
