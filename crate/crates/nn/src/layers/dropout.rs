use super::Module;
use crate::arch::LayerSpec;
use crate::param::{Param, Parameterized};
use crate::tensor::Tensor;
use rand::{Rng, RngCore};

/// Inverted dropout: kept units are scaled by `1/(1-p)` in training so
/// evaluation is the identity.
pub struct Dropout {
    pub p: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(p: f32) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Self { p, mask: None }
    }
}

impl Module for Dropout {
    fn infer(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        let mask: Vec<f32> =
            (0..x.numel()).map(|_| if self.p == 0.0 || rng.random::<f32>() < keep { scale } else { 0.0 }).collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("dropout backward without forward");
        let mut dx = grad.clone();
        dx.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        dx
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Dropout { p: self.p }]
    }
}

impl Parameterized for Dropout {
    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

/// Per-sample residual-branch dropping ("row" mode stochastic depth).
pub struct StochasticDepth {
    pub p: f32,
    mask: Option<Vec<f32>>,
}

impl StochasticDepth {
    pub fn new(p: f32) -> Self {
        assert!((0.0..1.0).contains(&p));
        Self { p, mask: None }
    }
}

impl Module for StochasticDepth {
    fn infer(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let n = x.shape()[0];
        let keep = 1.0 - self.p;
        let mask: Vec<f32> =
            (0..n).map(|_| if self.p == 0.0 || rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let per = x.numel() / n.max(1);
        let mut y = x.clone();
        for (b, m) in mask.iter().enumerate() {
            y.data_mut()[b * per..(b + 1) * per].iter_mut().for_each(|v| *v *= m);
        }
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("stochastic depth backward without forward");
        let per = grad.numel() / mask.len().max(1);
        let mut dx = grad.clone();
        for (b, m) in mask.iter().enumerate() {
            dx.data_mut()[b * per..(b + 1) * per].iter_mut().for_each(|v| *v *= m);
        }
        dx
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::StochasticDepth { p: self.p }]
    }
}

impl Parameterized for StochasticDepth {
    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}
