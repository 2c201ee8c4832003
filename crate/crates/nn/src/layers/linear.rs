use super::{uniform, Module};
use crate::arch::LayerSpec;
use crate::gemm::sgemm;
use crate::param::{join, Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

/// Fully connected layer on `[N, in]` input with weight stored `[out, in]`.
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Linear {
    /// PyTorch default initialisation: `U(-1/sqrt(in), 1/sqrt(in))` for both
    /// weight and bias.
    pub fn new(in_features: usize, out_features: usize, bias: bool, rng: &mut dyn RngCore) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        let w = uniform(in_features * out_features, bound, rng);
        let b = bias.then(|| uniform(out_features, bound, rng));
        Self::from_parts(in_features, out_features, w, b)
    }

    /// `U(-1/sqrt(out), 1/sqrt(out))` weight and zero bias, the classifier
    /// initialisation used by EfficientNet.
    pub fn classifier(in_features: usize, out_features: usize, rng: &mut dyn RngCore) -> Self {
        let bound = 1.0 / (out_features as f32).sqrt();
        let w = uniform(in_features * out_features, bound, rng);
        Self::from_parts(in_features, out_features, w, Some(vec![0.0; out_features]))
    }

    pub fn from_parts(in_features: usize, out_features: usize, weight: Vec<f32>, bias: Option<Vec<f32>>) -> Self {
        let weight = Param::weight(Tensor::from_vec(&[out_features, in_features], weight).unwrap());
        let bias = bias.map(|b| Param::weight(Tensor::from_vec(&[out_features], b).unwrap()));
        Self { in_features, out_features, weight, bias, input: None }
    }

    /// Applies the layer to a flat row-major `[rows, in]` buffer.
    pub fn apply_rows(&self, rows: usize, x: &[f32]) -> Vec<f32> {
        assert_eq!(x.len(), rows * self.in_features, "linear input width mismatch");
        let mut y = vec![0.0; rows * self.out_features];
        sgemm(rows, self.in_features, self.out_features, x, false, self.weight.value.data(), true, &mut y, false);
        if let Some(b) = &self.bias {
            for r in y.chunks_mut(self.out_features) {
                r.iter_mut().zip(b.value.data()).for_each(|(v, b)| *v += b);
            }
        }
        y
    }
}

impl Module for Linear {
    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, d) = x.dims2();
        assert_eq!(d, self.in_features, "linear expected {} features, got {d}", self.in_features);
        Tensor::from_vec(&[n, self.out_features], self.apply_rows(n, x.data())).unwrap()
    }

    fn forward(&mut self, x: &Tensor, _rng: &mut dyn RngCore) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("linear backward without forward");
        let (n, _) = x.dims2();
        let (i, o) = (self.in_features, self.out_features);
        sgemm(o, n, i, grad.data(), true, x.data(), false, self.weight.grad.data_mut(), true);
        if let Some(b) = &mut self.bias {
            let bg = b.grad.data_mut();
            for r in grad.data().chunks(o) {
                bg.iter_mut().zip(r).for_each(|(a, g)| *a += g);
            }
        }
        let mut dx = vec![0.0; n * i];
        sgemm(n, o, i, grad.data(), false, self.weight.value.data(), false, &mut dx, false);
        Tensor::from_vec(&[n, i], dx).unwrap()
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Linear {
            in_features: self.in_features,
            out_features: self.out_features,
            bias: self.bias.is_some(),
        }]
    }
}

impl Parameterized for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}
