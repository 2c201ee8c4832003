use super::Module;
use crate::arch::LayerSpec;
use crate::param::{join, Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

/// Ordered chain of named child modules.
#[derive(Default)]
pub struct Sequential {
    children: Vec<(String, Box<dyn Module>)>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a child named after its position.
    pub fn push(mut self, m: impl Module + 'static) -> Self {
        let name = self.children.len().to_string();
        self.children.push((name, Box::new(m)));
        self
    }

    pub fn push_named(mut self, name: &str, m: impl Module + 'static) -> Self {
        self.children.push((name.to_string(), Box::new(m)));
        self
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl Module for Sequential {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for (_, m) in &self.children {
            cur = m.infer(&cur);
        }
        cur
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let mut cur = x.clone();
        for (_, m) in &mut self.children {
            cur = m.forward(&cur, rng);
        }
        cur
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for (_, m) in self.children.iter_mut().rev() {
            g = m.backward(&g);
        }
        g
    }

    fn describe(&self) -> Vec<LayerSpec> {
        self.children.iter().flat_map(|(_, m)| m.describe()).collect()
    }
}

impl Parameterized for Sequential {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (name, m) in &self.children {
            m.visit_params(&join(prefix, name), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (name, m) in &mut self.children {
            m.visit_params_mut(&join(prefix, name), f);
        }
    }
}
