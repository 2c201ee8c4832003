//! Adaptive-moment optimisers and a step learning-rate schedule.

use crate::param::{Param, Parameterized};

/// Adam with either coupled L2 (`decoupled = false`, PyTorch `Adam`) or
/// decoupled weight decay (`decoupled = true`, PyTorch `AdamW`).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub decoupled: bool,
    step: u64,
    state: Vec<(String, Vec<f32>, Vec<f32>)>,
}

impl Adam {
    #[allow(clippy::self_named_constructors)]
    pub fn adam(lr: f32, weight_decay: f32) -> Self {
        Self::new(lr, weight_decay, false)
    }

    pub fn adamw(lr: f32, weight_decay: f32) -> Self {
        Self::new(lr, weight_decay, true)
    }

    fn new(lr: f32, weight_decay: f32, decoupled: bool) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, decoupled, step: 0, state: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter of `model`.
    pub fn step(&mut self, model: &mut dyn Parameterized) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut idx = 0usize;
        let state = &mut self.state;
        let (lr, b1, b2, eps, wd, decoupled) =
            (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, self.decoupled);
        model.visit_params_mut("", &mut |name, p: &mut Param| {
            if !p.is_trainable() {
                return;
            }
            if idx == state.len() {
                state.push((name.to_string(), vec![0.0; p.value.numel()], vec![0.0; p.value.numel()]));
            }
            let (sname, m, v) = &mut state[idx];
            debug_assert_eq!(sname, name, "parameter order changed between steps");
            idx += 1;
            let w = p.value.data_mut();
            let g = p.grad.data();
            for i in 0..w.len() {
                let mut gi = g[i];
                if decoupled {
                    w[i] *= 1.0 - lr * wd;
                } else {
                    gi += wd * w[i];
                }
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}

/// Learning rate after decaying `base` by `gamma` at each milestone epoch
/// already reached.
pub fn multistep_lr(base: f32, milestones: &[usize], gamma: f32, epoch: usize) -> f32 {
    let hits = milestones.iter().filter(|&&m| epoch >= m).count();
    base * gamma.powi(hits as i32)
}
