//! EfficientNet-B0 feature extractor with a configurable number of input
//! channels.
//!
//! Parameter names follow the torchvision layout (`features.{stage}.{block}.
//! block.{i}...`), so a converted ImageNet checkpoint loads directly once its
//! stem has been adapted to the input channel count.

use crate::arch::LayerSpec;
use crate::layers::{
    Activation, ActivationKind, BatchNorm2d, Conv2d, GlobalAvgPool, Module, Sequential, SqueezeExcite, StochasticDepth,
};
use crate::param::{join, Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// One stage of inverted-residual blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub expand_ratio: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficientNetConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<StageConfig>,
    pub head_channels: usize,
    /// Stochastic-depth rate of the last block; earlier blocks scale linearly.
    pub stochastic_depth: f32,
}

impl EfficientNetConfig {
    pub fn b0(in_channels: usize) -> Self {
        let s = |expand_ratio, kernel, stride, in_channels, out_channels, layers| StageConfig {
            expand_ratio,
            kernel,
            stride,
            in_channels,
            out_channels,
            layers,
        };
        Self {
            in_channels,
            stem_channels: 32,
            stages: vec![
                s(1, 3, 1, 32, 16, 1),
                s(6, 3, 2, 16, 24, 2),
                s(6, 5, 2, 24, 40, 2),
                s(6, 3, 2, 40, 80, 3),
                s(6, 5, 1, 80, 112, 3),
                s(6, 5, 2, 112, 192, 4),
                s(6, 3, 1, 192, 320, 1),
            ],
            head_channels: 1280,
            stochastic_depth: 0.2,
        }
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.layers).sum()
    }
}

fn conv_norm_act(
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
    act: bool,
    rng: &mut dyn RngCore,
) -> Sequential {
    let seq = Sequential::new()
        .push(Conv2d::new(cin, cout, kernel, stride, (kernel - 1) / 2, groups, false, rng))
        .push(BatchNorm2d::new(cout));
    if act {
        seq.push(Activation::new(ActivationKind::Silu))
    } else {
        seq
    }
}

/// Inverted residual block with squeeze-and-excitation.
pub struct MbConv {
    block: Sequential,
    stochastic_depth: StochasticDepth,
    residual: bool,
}

impl MbConv {
    pub fn new(
        expand_ratio: usize,
        kernel: usize,
        stride: usize,
        cin: usize,
        cout: usize,
        sd_prob: f32,
        rng: &mut dyn RngCore,
    ) -> Self {
        let expanded = cin * expand_ratio;
        let mut block = Sequential::new();
        if expanded != cin {
            block = block.push(conv_norm_act(cin, expanded, 1, 1, 1, true, rng));
        }
        block = block
            .push(conv_norm_act(expanded, expanded, kernel, stride, expanded, true, rng))
            .push(SqueezeExcite::new(expanded, (cin / 4).max(1), rng))
            .push(conv_norm_act(expanded, cout, 1, 1, 1, false, rng));
        Self { block, stochastic_depth: StochasticDepth::new(sd_prob), residual: stride == 1 && cin == cout }
    }
}

impl Module for MbConv {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = self.block.infer(x);
        if self.residual {
            y.add_assign(x);
        }
        y
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let y = self.block.forward(x, rng);
        if self.residual {
            let mut y = self.stochastic_depth.forward(&y, rng);
            y.add_assign(x);
            y
        } else {
            y
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        if self.residual {
            let g = self.stochastic_depth.backward(grad);
            let mut dx = self.block.backward(&g);
            dx.add_assign(grad);
            dx
        } else {
            self.block.backward(grad)
        }
    }

    fn describe(&self) -> Vec<LayerSpec> {
        let body = self.block.describe();
        if self.residual {
            let mut body = body;
            body.push(LayerSpec::StochasticDepth { p: self.stochastic_depth.p });
            vec![LayerSpec::Residual(body)]
        } else {
            body
        }
    }
}

impl Parameterized for MbConv {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.block.visit_params(&join(prefix, "block"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.block.visit_params_mut(&join(prefix, "block"), f);
    }
}

/// Convolutional trunk plus global average pooling: `[N, C, H, W] -> [N, 1280]`.
pub struct EfficientNet {
    pub config: EfficientNetConfig,
    features: Sequential,
    pool: GlobalAvgPool,
}

/// Name of the stem convolution weight.
pub const STEM_WEIGHT: &str = "features.0.0.weight";

impl EfficientNet {
    pub fn new(config: EfficientNetConfig, rng: &mut dyn RngCore) -> Self {
        let mut features =
            Sequential::new().push(conv_norm_act(config.in_channels, config.stem_channels, 3, 2, 1, true, rng));
        let total = config.total_blocks() as f32;
        let mut block_id = 0usize;
        for st in &config.stages {
            let mut stage = Sequential::new();
            for i in 0..st.layers {
                let (cin, stride) = if i == 0 { (st.in_channels, st.stride) } else { (st.out_channels, 1) };
                let p = config.stochastic_depth * block_id as f32 / total;
                stage = stage.push(MbConv::new(st.expand_ratio, st.kernel, stride, cin, st.out_channels, p, rng));
                block_id += 1;
            }
            features = features.push(stage);
        }
        let last = config.stages.last().map_or(config.stem_channels, |s| s.out_channels);
        features = features.push(conv_norm_act(last, config.head_channels, 1, 1, 1, true, rng));
        Self { config, features, pool: GlobalAvgPool::new() }
    }

    pub fn feature_dim(&self) -> usize {
        self.config.head_channels
    }
}

impl Module for EfficientNet {
    fn infer(&self, x: &Tensor) -> Tensor {
        self.pool.infer(&self.features.infer(x))
    }

    fn forward(&mut self, x: &Tensor, rng: &mut dyn RngCore) -> Tensor {
        let y = self.features.forward(x, rng);
        self.pool.forward(&y, rng)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.pool.backward(grad);
        self.features.backward(&g)
    }

    fn describe(&self) -> Vec<LayerSpec> {
        let mut d = self.features.describe();
        d.extend(self.pool.describe());
        d
    }
}

impl Parameterized for EfficientNet {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.features.visit_params(&join(prefix, "features"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.features.visit_params_mut(&join(prefix, "features"), f);
    }
}
