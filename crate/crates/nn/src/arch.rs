//! Declarative layer descriptions.
//!
//! Every module can describe itself as a tree of [`LayerSpec`]s. The
//! descriptions carry enough shape information to count parameters on their
//! own; cost accounting propagates an input shape through them to count
//! operations.

use crate::layers::ActivationKind;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    /// Applied to the last axis; on token sequences it acts per token.
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    LayerNorm {
        dim: usize,
    },
    Activation(ActivationKind),
    /// `[C, H, W] -> [C]`.
    GlobalAvgPool,
    /// `[C] -> [C, 1, 1]`.
    Unflatten,
    Dropout {
        p: f32,
    },
    StochasticDepth {
        p: f32,
    },
    /// `x + body(x)`.
    Residual(Vec<LayerSpec>),
    /// `x * body(x)` with `body(x)` broadcast over space.
    Gate(Vec<LayerSpec>),
    /// `[C, H, W] -> [H*W tokens, C]`.
    ImageToTokens,
    /// Prepends one learned token of width `dim`.
    ClassToken {
        dim: usize,
    },
    /// Adds a learned `[tokens, dim]` table.
    PositionalEmbedding {
        tokens: usize,
        dim: usize,
    },
    /// Token ids `[len] -> [len, dim]`.
    TokenEmbedding {
        vocab: usize,
        dim: usize,
    },
    /// Multi-head self-attention with fused QKV input projection and an
    /// output projection, both with bias.
    Attention {
        dim: usize,
        heads: usize,
        causal: bool,
    },
    /// Picks a single token: `[n, d] -> [d]`.
    SelectToken,
}

impl LayerSpec {
    /// Learnable parameter count (running statistics excluded).
    pub fn param_count(&self) -> usize {
        match self {
            Self::Conv2d { in_channels, out_channels, kernel, groups, bias, .. } => {
                out_channels * (in_channels / groups) * kernel * kernel + if *bias { *out_channels } else { 0 }
            }
            Self::Linear { in_features, out_features, bias } => {
                in_features * out_features + if *bias { *out_features } else { 0 }
            }
            Self::BatchNorm { channels } => 2 * channels,
            Self::LayerNorm { dim } => 2 * dim,
            Self::Residual(body) | Self::Gate(body) => total_params(body),
            Self::ClassToken { dim } => *dim,
            Self::PositionalEmbedding { tokens, dim } => tokens * dim,
            Self::TokenEmbedding { vocab, dim } => vocab * dim,
            Self::Attention { dim, .. } => 4 * dim * dim + 4 * dim,
            Self::Activation(_)
            | Self::GlobalAvgPool
            | Self::Unflatten
            | Self::Dropout { .. }
            | Self::StochasticDepth { .. }
            | Self::ImageToTokens
            | Self::SelectToken => 0,
        }
    }
}

pub fn total_params(layers: &[LayerSpec]) -> usize {
    layers.iter().map(LayerSpec::param_count).sum()
}

/// Depth-first iteration over a description tree.
pub fn walk<'a>(layers: &'a [LayerSpec], f: &mut dyn FnMut(&'a LayerSpec)) {
    for l in layers {
        f(l);
        if let LayerSpec::Residual(b) | LayerSpec::Gate(b) = l {
            walk(b, f);
        }
    }
}
