//! Layers with explicit forward/backward passes.
//!
//! `infer` is the evaluation-mode pass and only borrows the layer, so a model
//! can serve concurrent read-only inference. `forward` is the training-mode
//! pass: it caches whatever `backward` needs and may update running state.
//! `backward` consumes that cache, accumulates parameter gradients and returns
//! the gradient with respect to the layer input.

mod activation;
mod batchnorm;
mod container;
mod conv;
mod dropout;
mod linear;
mod pool;
mod squeeze_excite;

pub use activation::{Activation, ActivationKind};
pub use batchnorm::BatchNorm2d;
pub use container::Sequential;
pub use conv::Conv2d;
pub use dropout::{Dropout, StochasticDepth};
pub use linear::Linear;
pub use pool::GlobalAvgPool;
pub use squeeze_excite::SqueezeExcite;

use crate::arch::LayerSpec;
use crate::param::Parameterized;
use crate::tensor::Tensor;
use rand::RngCore;

pub trait Module: Parameterized + Send + Sync {
    fn infer(&self, x: &Tensor) -> Tensor;
    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor;
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    /// Architecture description used for cost accounting.
    fn describe(&self) -> Vec<LayerSpec>;
}

/// Kaiming-normal initialisation with `fan_out` scaling.
pub(crate) fn kaiming_normal_fan_out(n: usize, fan_out: usize, rng: &mut dyn RngCore) -> Vec<f32> {
    use rand_distr::{Distribution, Normal};
    let std = (2.0 / fan_out.max(1) as f32).sqrt();
    let normal = Normal::new(0.0f32, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

pub(crate) fn uniform(n: usize, bound: f32, rng: &mut dyn RngCore) -> Vec<f32> {
    use rand::Rng;
    if bound == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}
