use super::Module;
use crate::arch::LayerSpec;
use crate::par;
use crate::param::{join, Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

/// Batch normalisation over the channel axis of NCHW input.
///
/// Training uses biased batch variance for normalisation and folds the
/// unbiased estimate into the running variance with `momentum`.
pub struct BatchNorm2d {
    pub channels: usize,
    pub eps: f32,
    pub momentum: f32,
    pub weight: Param,
    pub bias: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self::with_eps(channels, 1e-5, 0.1)
    }

    pub fn with_eps(channels: usize, eps: f32, momentum: f32) -> Self {
        Self {
            channels,
            eps,
            momentum,
            weight: Param::weight(Tensor::full(&[channels], 1.0)),
            bias: Param::weight(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], 1.0)),
            cache: None,
        }
    }

    fn apply_affine(x: &Tensor, scale: &[f32], shift: &[f32]) -> Tensor {
        let (_, c, h, w) = x.dims4();
        let plane = h * w;
        let mut y = x.clone();
        par::for_each_chunk_mut(y.data_mut(), c * plane, |_, s| {
            for ch in 0..c {
                let (a, b) = (scale[ch], shift[ch]);
                s[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v = *v * a + b);
            }
        });
        y
    }

    /// Per-channel sums of `f(sample_slice_for_channel)` over the batch.
    fn channel_reduce<F>(x: &Tensor, f: F) -> Vec<f64>
    where
        F: Fn(usize, &[f32]) -> f64 + Sync + Send,
    {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let d = x.data();
        par::map_range(c, |ch| (0..n).map(|b| f(ch, &d[(b * c + ch) * plane..(b * c + ch + 1) * plane])).sum())
    }
}

impl Module for BatchNorm2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        let g = self.weight.value.data();
        let b = self.bias.value.data();
        let rm = self.running_mean.value.data();
        let rv = self.running_var.value.data();
        let scale: Vec<f32> = (0..self.channels).map(|c| g[c] / (rv[c] + self.eps).sqrt()).collect();
        let shift: Vec<f32> = (0..self.channels).map(|c| b[c] - rm[c] * scale[c]).collect();
        Self::apply_affine(x, &scale, &shift)
    }

    fn forward(&mut self, x: &Tensor, _rng: &mut dyn RngCore) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels);
        let m = (n * h * w) as f64;
        let mean: Vec<f64> =
            Self::channel_reduce(x, |_, s| s.iter().map(|v| *v as f64).sum()).into_iter().map(|s| s / m).collect();
        let var: Vec<f64> = Self::channel_reduce(x, |ch, s| s.iter().map(|v| (*v as f64 - mean[ch]).powi(2)).sum())
            .into_iter()
            .map(|s| s / m)
            .collect();
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / ((*v as f32) + self.eps).sqrt()).collect();
        let shift: Vec<f32> = (0..c).map(|ch| -(mean[ch] as f32) * inv_std[ch]).collect();
        let xhat = Self::apply_affine(x, &inv_std, &shift);
        let g = self.weight.value.data();
        let b = self.bias.value.data();
        let y = Self::apply_affine(&xhat, g, b);

        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let mom = self.momentum;
        let rm = self.running_mean.value.data_mut();
        for ch in 0..c {
            rm[ch] = (1.0 - mom) * rm[ch] + mom * mean[ch] as f32;
        }
        let rv = self.running_var.value.data_mut();
        for ch in 0..c {
            rv[ch] = (1.0 - mom) * rv[ch] + mom * (var[ch] * unbias) as f32;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without forward");
        let (n, c, h, w) = xhat.dims4();
        let plane = h * w;
        let m = (n * plane) as f32;
        let gd = grad.data();
        let dbeta = Self::channel_reduce(grad, |_, s| s.iter().map(|v| *v as f64).sum());
        let xd = xhat.data();
        let dgamma: Vec<f64> = par::map_range(c, |ch| {
            (0..n)
                .map(|b| {
                    let o = (b * c + ch) * plane;
                    gd[o..o + plane].iter().zip(&xd[o..o + plane]).map(|(g, x)| (*g as f64) * (*x as f64)).sum::<f64>()
                })
                .sum()
        });
        let gamma = self.weight.value.data();
        let coef: Vec<f32> = (0..c).map(|ch| gamma[ch] * inv_std[ch] / m).collect();
        let db32: Vec<f32> = dbeta.iter().map(|v| *v as f32).collect();
        let dg32: Vec<f32> = dgamma.iter().map(|v| *v as f32).collect();
        let mut dx = Tensor::zeros(grad.shape());
        par::for_each_chunk_mut(dx.data_mut(), c * plane, |b, out| {
            for ch in 0..c {
                let o = (b * c + ch) * plane;
                let dst = &mut out[ch * plane..(ch + 1) * plane];
                for i in 0..plane {
                    dst[i] = coef[ch] * (m * gd[o + i] - db32[ch] - xd[o + i] * dg32[ch]);
                }
            }
        });
        self.weight.grad.data_mut().iter_mut().zip(&dg32).for_each(|(a, b)| *a += b);
        self.bias.grad.data_mut().iter_mut().zip(&db32).for_each(|(a, b)| *a += b);
        dx
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::BatchNorm { channels: self.channels }]
    }
}

impl Parameterized for BatchNorm2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
