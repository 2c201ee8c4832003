//! Named parameters, gradients and the visitor used for optimisation,
//! checkpointing and freezing.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable weight.
    Weight,
    /// Non-learnable state saved with the model (e.g. running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
    /// Frozen weights are skipped by optimisers and not counted as trainable.
    pub frozen: bool,
}

impl Param {
    pub fn weight(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, kind: ParamKind::Weight, frozen: false }
    }

    pub fn buffer(value: Tensor) -> Self {
        Self { value, grad: Tensor::default(), kind: ParamKind::Buffer, frozen: true }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Weight && !self.frozen
    }

    pub fn zero_grad(&mut self) {
        if self.kind == ParamKind::Weight {
            self.grad.fill(0.0);
        }
    }
}

/// Anything holding named parameters.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn trainable_param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| {
            if p.is_trainable() {
                n += p.value.numel();
            }
        });
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.visit_params_mut("", &mut |_, p| {
            if p.kind == ParamKind::Weight {
                p.frozen = frozen;
            }
        });
    }

    /// Order-sensitive FNV-1a digest over every name, shape and value bit.
    fn param_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        self.visit_params("", &mut |name, p| {
            eat(name.as_bytes());
            for d in p.value.shape() {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        });
        h
    }
}

/// Joins a prefix and a child name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
