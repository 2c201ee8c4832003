//! Training-stage hyperparameters.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    MvOnly,
    Fusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adam with L2 penalty folded into the gradient.
    Adam,
    /// Adam with decoupled weight decay.
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub weight_decay: f32,
    /// Epochs at which the learning rate is multiplied by `lr_gamma`.
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f32,
    pub batch_size: usize,
    pub seed: u64,
    /// Temporal segments drawn per training clip.
    pub segments: usize,
    pub crop_size: usize,
    pub flip_prob: f64,
    /// Centre views per clip in the per-epoch validation pass.
    pub val_segments: usize,
    /// Hard cap on optimisation steps across all epochs.
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    pub fn mv_only() -> Self {
        Self {
            stage: Stage::MvOnly,
            epochs: 200,
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            weight_decay: 1e-4,
            lr_milestones: vec![80, 160],
            lr_gamma: 0.1,
            batch_size: 64,
            seed: 0,
            segments: 3,
            crop_size: 224,
            flip_prob: 0.5,
            val_segments: 8,
            max_steps: None,
        }
    }

    pub fn fusion() -> Self {
        Self {
            stage: Stage::Fusion,
            epochs: 50,
            optimizer: OptimizerKind::AdamW,
            lr: 1e-4,
            weight_decay: 1e-2,
            lr_milestones: Vec::new(),
            lr_gamma: 0.1,
            ..Self::mv_only()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::MvOnly => Self::mv_only(),
            Stage::Fusion => Self::fusion(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.segments == 0 || self.val_segments == 0 {
            return bad("segment counts must be at least 1");
        }
        if self.crop_size == 0 {
            return bad("crop_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be at least 1");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        mvfuse_nn::optim::multistep_lr(self.lr, &self.lr_milestones, self.lr_gamma, epoch)
    }

    pub fn optimizer(&self) -> mvfuse_nn::optim::Adam {
        match self.optimizer {
            OptimizerKind::Adam => mvfuse_nn::optim::Adam::adam(self.lr, self.weight_decay),
            OptimizerKind::AdamW => mvfuse_nn::optim::Adam::adamw(self.lr, self.weight_decay),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_defaults() {
        let mv = TrainConfig::mv_only();
        assert_eq!((mv.epochs, mv.lr, mv.weight_decay, mv.lr_gamma), (200, 1e-2, 1e-4, 0.1));
        assert_eq!(mv.lr_milestones, [80, 160]);
        assert_eq!(mv.optimizer, OptimizerKind::Adam);
        let f = TrainConfig::fusion();
        assert_eq!((f.epochs, f.lr, f.optimizer), (50, 1e-4, OptimizerKind::AdamW));
        mv.validate().unwrap();
        f.validate().unwrap();
    }

    #[test]
    fn schedule_decays_tenfold_at_milestones() {
        let mv = TrainConfig::mv_only();
        assert_eq!(mv.lr_at(0), 1e-2);
        assert_eq!(mv.lr_at(79), 1e-2);
        assert!((mv.lr_at(80) - 1e-3).abs() < 1e-9);
        assert!((mv.lr_at(160) - 1e-4).abs() < 1e-10);
    }

    #[test]
    fn toml_round_trip_and_rejection() {
        let mv = TrainConfig::mv_only();
        let text = toml::to_string(&mv).unwrap();
        assert!(text.contains("stage = \"mv-only\""));
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), mv);
        let bad = TrainConfig { batch_size: 0, ..mv };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
