use super::Module;
use crate::arch::LayerSpec;
use crate::par;
use crate::param::{Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Silu,
    Sigmoid,
    Gelu,
    /// `x * sigmoid(1.702 x)`, the approximation used by CLIP.
    QuickGelu,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Silu => "silu",
            Self::Sigmoid => "sigmoid",
            Self::Gelu => "gelu",
            Self::QuickGelu => "quick_gelu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "relu" => Self::Relu,
            "silu" | "swish" => Self::Silu,
            "sigmoid" => Self::Sigmoid,
            "gelu" => Self::Gelu,
            "quick_gelu" => Self::QuickGelu,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Silu => x * sigmoid(x),
            Self::Sigmoid => sigmoid(x),
            Self::Gelu => 0.5 * x * (1.0 + erf(x / std::f32::consts::SQRT_2)),
            Self::QuickGelu => x * sigmoid(1.702 * x),
        }
    }

    /// Derivative with respect to the input.
    #[inline]
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Self::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Self::Gelu => {
                let cdf = 0.5 * (1.0 + erf(x / std::f32::consts::SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f32::consts::PI).sqrt();
                cdf + x * pdf
            }
            Self::QuickGelu => {
                let s = sigmoid(1.702 * x);
                s + 1.702 * x * s * (1.0 - s)
            }
        }
    }
}

/// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
fn erf(x: f32) -> f32 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let y = 1.0
        - (((((1.061_405_4 * t - 1.453_152_1) * t) + 1.421_413_8) * t - 0.284_496_74) * t + 0.254_829_6)
            * t
            * (-x * x).exp();
    if x >= 0.0 {
        y
    } else {
        -y
    }
}

const PAR_CHUNK: usize = 1 << 14;

pub struct Activation {
    pub kind: ActivationKind,
    input: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, input: None }
    }
}

impl Module for Activation {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        let k = self.kind;
        par::for_each_chunk_mut(y.data_mut(), PAR_CHUNK, |_, s| s.iter_mut().for_each(|v| *v = k.apply(*v)));
        y
    }

    fn forward(&mut self, x: &Tensor, _rng: &mut dyn RngCore) -> Tensor {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("activation backward without forward");
        let k = self.kind;
        let mut dx = grad.clone();
        let xd = x.data();
        par::for_each_chunk_mut(dx.data_mut(), PAR_CHUNK, |ci, s| {
            let base = ci * PAR_CHUNK;
            for (i, v) in s.iter_mut().enumerate() {
                *v *= k.derivative(xd[base + i]);
            }
        });
        dx
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Activation(self.kind)]
    }
}

impl Parameterized for Activation {
    fn visit_params(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_params_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in [
            ActivationKind::Relu,
            ActivationKind::Silu,
            ActivationKind::Sigmoid,
            ActivationKind::Gelu,
            ActivationKind::QuickGelu,
        ] {
            for &x in &[-3.1f32, -0.7, 0.3, 1.9, 4.2] {
                let h = 1e-3;
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!((fd - kind.derivative(x)).abs() < 2e-3, "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn erf_known_values() {
        assert!((erf(0.0)).abs() < 1e-6);
        assert!((erf(1.0) - 0.842_700_8).abs() < 1e-6);
        assert!((erf(-2.0) + 0.995_322_3).abs() < 1e-6);
    }
}
