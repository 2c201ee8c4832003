use super::{Activation, ActivationKind, Conv2d, Module};
use crate::arch::LayerSpec;
use crate::param::{join, Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

/// Channel gating: `x * sigmoid(fc2(silu(fc1(mean_hw(x)))))`.
pub struct SqueezeExcite {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    act: Activation,
    gate: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl SqueezeExcite {
    pub fn new(channels: usize, squeeze: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            fc1: Conv2d::new(channels, squeeze, 1, 1, 0, 1, true, rng),
            fc2: Conv2d::new(squeeze, channels, 1, 1, 0, 1, true, rng),
            act: Activation::new(ActivationKind::Silu),
            gate: Activation::new(ActivationKind::Sigmoid),
            cache: None,
        }
    }

    fn pooled(x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let inv = 1.0 / plane as f32;
        let d = x.data().chunks(plane).map(|p| p.iter().sum::<f32>() * inv).collect();
        Tensor::from_vec(&[n, c, 1, 1], d).unwrap()
    }

    fn scale(x: &Tensor, s: &Tensor) -> Tensor {
        let (_, _, h, w) = x.dims4();
        let plane = h * w;
        let mut y = x.clone();
        for (chunk, g) in y.data_mut().chunks_mut(plane).zip(s.data()) {
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        y
    }
}

impl Module for SqueezeExcite {
    fn infer(&self, x: &Tensor) -> Tensor {
        let s = self.gate.infer(&self.fc2.infer(&self.act.infer(&self.fc1.infer(&Self::pooled(x)))));
        Self::scale(x, &s)
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let p = Self::pooled(x);
        let a = self.fc1.forward(&p, rng);
        let a = self.act.forward(&a, rng);
        let a = self.fc2.forward(&a, rng);
        let s = self.gate.forward(&a, rng);
        let y = Self::scale(x, &s);
        self.cache = Some((x.clone(), s));
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (x, s) = self.cache.take().expect("squeeze-excite backward without forward");
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let ds: Vec<f32> = grad
            .data()
            .chunks(plane)
            .zip(x.data().chunks(plane))
            .map(|(g, xv)| g.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let ds = Tensor::from_vec(&[n, c, 1, 1], ds).unwrap();
        let d = self.gate.backward(&ds);
        let d = self.fc2.backward(&d);
        let d = self.act.backward(&d);
        let dp = self.fc1.backward(&d);
        let inv = 1.0 / plane as f32;
        let mut dx = Self::scale(grad, &s);
        for (chunk, g) in dx.data_mut().chunks_mut(plane).zip(dp.data()) {
            chunk.iter_mut().for_each(|v| *v += g * inv);
        }
        dx
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Gate(vec![
            LayerSpec::GlobalAvgPool,
            LayerSpec::Unflatten,
            self.fc1.describe().remove(0),
            LayerSpec::Activation(ActivationKind::Silu),
            self.fc2.describe().remove(0),
            LayerSpec::Activation(ActivationKind::Sigmoid),
        ])]
    }
}

impl Parameterized for SqueezeExcite {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}
