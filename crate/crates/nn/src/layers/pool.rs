use super::Module;
use crate::arch::LayerSpec;
use crate::param::{Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

/// `[N, C, H, W] -> [N, C]` spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    hw: Option<(usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for GlobalAvgPool {
    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let inv = 1.0 / plane as f32;
        let data = x.data().chunks(plane).map(|p| p.iter().sum::<f32>() * inv).collect();
        Tensor::from_vec(&[n, c], data).unwrap()
    }

    fn forward(&mut self, x: &Tensor, _rng: &mut dyn RngCore) -> Tensor {
        let (_, _, h, w) = x.dims4();
        self.hw = Some((h, w));
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (h, w) = self.hw.take().expect("pool backward without forward");
        let (n, c) = grad.dims2();
        let plane = h * w;
        let inv = 1.0 / plane as f32;
        let mut data = Vec::with_capacity(n * c * plane);
        for g in grad.data() {
            data.extend(std::iter::repeat_n(g * inv, plane));
        }
        Tensor::from_vec(&[n, c, h, w], data).unwrap()
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::GlobalAvgPool]
    }
}

impl Parameterized for GlobalAvgPool {
    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}
