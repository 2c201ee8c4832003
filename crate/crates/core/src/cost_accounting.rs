//! Inference cost accounting under a view protocol.
//!
//! Per-view costs come from walking a model's [`LayerSpec`] description with
//! shape propagation. A ledger multiplies each branch by its temporal and
//! spatial view counts and adds the head.

use crate::error::{Error, Result};
use mvfuse_nn::arch::LayerSpec;
use mvfuse_nn::layers::ActivationKind;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Activation shape flowing between layers (batch of one).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Tokens { n: usize, d: usize },
    Vector(usize),
    Ids(usize),
}

impl Shape {
    pub fn numel(&self) -> u64 {
        (match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Tokens { n, d } => n * d,
            Shape::Vector(d) => d,
            Shape::Ids(n) => n,
        }) as u64
    }

    /// Size of the feature axis every channel-wise layer acts on.
    fn features(&self) -> usize {
        match *self {
            Shape::Map { c, .. } => c,
            Shape::Tokens { d, .. } => d,
            Shape::Vector(d) => d,
            Shape::Ids(_) => 0,
        }
    }

    /// Positions a per-feature layer is applied at.
    fn positions(&self) -> u64 {
        (match *self {
            Shape::Map { h, w, .. } => h * w,
            Shape::Tokens { n, .. } => n,
            Shape::Vector(_) => 1,
            Shape::Ids(n) => n,
        }) as u64
    }
}

/// Operation counts by category for one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    /// Multiply-accumulates of convolutions, linear layers and attention
    /// score / weighted-sum products.
    pub macs: u64,
    /// Elements normalised by batch or layer normalisation.
    pub normalization: u64,
    /// Input elements averaged by pooling.
    pub pooling: u64,
    /// Activation and softmax evaluations.
    pub activation: u64,
    pub bias: u64,
    pub residual: u64,
    /// Channel-gate multiplies.
    pub gating: u64,
    /// Positional-embedding additions.
    pub embedding: u64,
}

impl OpCounts {
    fn add(&mut self, o: &OpCounts) {
        self.macs += o.macs;
        self.normalization += o.normalization;
        self.pooling += o.pooling;
        self.activation += o.activation;
        self.bias += o.bias;
        self.residual += o.residual;
        self.gating += o.gating;
        self.embedding += o.embedding;
    }

    pub fn flops(&self, policy: &CountingPolicy) -> u64 {
        let mut f = self.macs * policy.flops_per_mac;
        if policy.normalization {
            f += self.normalization;
        }
        if policy.pooling {
            f += self.pooling;
        }
        if policy.pointwise {
            f += self.activation + self.bias + self.residual + self.gating + self.embedding;
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingPolicy {
    pub flops_per_mac: u64,
    pub normalization: bool,
    pub pooling: bool,
    /// Activations, bias adds, residual adds, gates and embedding adds.
    pub pointwise: bool,
}

impl CountingPolicy {
    /// One FLOP per multiply-accumulate plus normalisation and pooling
    /// elements. Reproduces the published per-model GFLOPs.
    pub const fn macs() -> Self {
        Self { flops_per_mac: 1, normalization: true, pooling: true, pointwise: false }
    }

    /// Two FLOPs per multiply-accumulate plus every elementwise op.
    pub const fn two_ops_per_mac() -> Self {
        Self { flops_per_mac: 2, normalization: true, pooling: true, pointwise: true }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "macs" => Ok(Self::macs()),
            "two-ops-per-mac" => Ok(Self::two_ops_per_mac()),
            other => Err(Error::Config(format!("unknown counting policy `{other}` (macs | two-ops-per-mac)"))),
        }
    }

    pub fn describe(&self) -> String {
        let mut parts = vec![format!("{} FLOP per multiply-accumulate", self.flops_per_mac)];
        if self.normalization {
            parts.push("1 per normalised element".into());
        }
        if self.pooling {
            parts.push("1 per pooled input element".into());
        }
        if self.pointwise {
            parts.push("1 per activation, bias, residual, gate and embedding element".into());
        } else {
            parts.push("activations and other pointwise ops excluded".into());
        }
        parts.join("; ")
    }
}

impl Default for CountingPolicy {
    fn default() -> Self {
        Self::macs()
    }
}

fn shape_error(layer: &str, shape: Shape) -> Error {
    Error::InvalidArgument(format!("layer `{layer}` cannot take input of shape {shape:?}"))
}

fn expect_features(layer: &str, shape: Shape, want: usize) -> Result<()> {
    if shape.features() != want {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer}` expects {want} features, input has shape {shape:?}"
        )));
    }
    Ok(())
}

/// Counts the operations of `layers` applied to one input of `shape` and
/// returns the counts together with the output shape.
pub fn count_ops(layers: &[LayerSpec], shape: Shape) -> Result<(OpCounts, Shape)> {
    let mut total = OpCounts::default();
    let mut cur = shape;
    for layer in layers {
        let (ops, next) = count_layer(layer, cur)?;
        total.add(&ops);
        cur = next;
    }
    Ok((total, cur))
}

fn count_layer(layer: &LayerSpec, shape: Shape) -> Result<(OpCounts, Shape)> {
    let mut ops = OpCounts::default();
    let out = match *layer {
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding, groups, bias } => {
            let Shape::Map { c, h, w } = shape else {
                return Err(shape_error("conv2d", shape));
            };
            expect_features("conv2d", shape, in_channels)?;
            if groups == 0 || stride == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
                return Err(Error::InvalidArgument(format!("conv2d {c}->{out_channels} with {groups} groups")));
            }
            if h + 2 * padding < kernel || w + 2 * padding < kernel {
                return Err(shape_error("conv2d", shape));
            }
            let ho = (h + 2 * padding - kernel) / stride + 1;
            let wo = (w + 2 * padding - kernel) / stride + 1;
            let outputs = (out_channels * ho * wo) as u64;
            ops.macs = outputs * (in_channels / groups * kernel * kernel) as u64;
            if bias {
                ops.bias = outputs;
            }
            Shape::Map { c: out_channels, h: ho, w: wo }
        }
        LayerSpec::Linear { in_features, out_features, bias } => {
            expect_features("linear", shape, in_features)?;
            let rows = shape.positions();
            ops.macs = rows * (in_features * out_features) as u64;
            if bias {
                ops.bias = rows * out_features as u64;
            }
            match shape {
                Shape::Tokens { n, .. } => Shape::Tokens { n, d: out_features },
                Shape::Vector(_) => Shape::Vector(out_features),
                Shape::Map { .. } | Shape::Ids(_) => return Err(shape_error("linear", shape)),
            }
        }
        LayerSpec::BatchNorm { channels } => {
            expect_features("batchnorm", shape, channels)?;
            ops.normalization = shape.numel();
            shape
        }
        LayerSpec::LayerNorm { dim } => {
            expect_features("layernorm", shape, dim)?;
            ops.normalization = shape.numel();
            shape
        }
        LayerSpec::Activation(_) => {
            if matches!(shape, Shape::Ids(_)) {
                return Err(shape_error("activation", shape));
            }
            ops.activation = shape.numel();
            shape
        }
        LayerSpec::GlobalAvgPool => {
            let Shape::Map { c, .. } = shape else {
                return Err(shape_error("global_avg_pool", shape));
            };
            ops.pooling = shape.numel();
            Shape::Vector(c)
        }
        LayerSpec::Unflatten => {
            let Shape::Vector(c) = shape else {
                return Err(shape_error("unflatten", shape));
            };
            Shape::Map { c, h: 1, w: 1 }
        }
        LayerSpec::Dropout { .. } | LayerSpec::StochasticDepth { .. } => shape,
        LayerSpec::Residual(ref body) => {
            let (inner, out) = count_ops(body, shape)?;
            if out != shape {
                return Err(Error::InvalidArgument(format!("residual body maps {shape:?} to {out:?}")));
            }
            ops = inner;
            ops.residual += shape.numel();
            shape
        }
        LayerSpec::Gate(ref body) => {
            let (inner, out) = count_ops(body, shape)?;
            if out.features() != shape.features() || out.positions() != 1 {
                return Err(Error::InvalidArgument(format!("gate body maps {shape:?} to {out:?}")));
            }
            ops = inner;
            ops.gating += shape.numel();
            shape
        }
        LayerSpec::ImageToTokens => {
            let Shape::Map { c, h, w } = shape else {
                return Err(shape_error("image_to_tokens", shape));
            };
            Shape::Tokens { n: h * w, d: c }
        }
        LayerSpec::ClassToken { dim } => {
            let Shape::Tokens { n, d } = shape else {
                return Err(shape_error("class_token", shape));
            };
            expect_features("class_token", shape, dim)?;
            Shape::Tokens { n: n + 1, d }
        }
        LayerSpec::PositionalEmbedding { tokens, dim } => {
            let Shape::Tokens { n, .. } = shape else {
                return Err(shape_error("positional_embedding", shape));
            };
            expect_features("positional_embedding", shape, dim)?;
            if n > tokens {
                return Err(Error::InvalidArgument(format!("{n} tokens exceed {tokens} positions")));
            }
            ops.embedding = shape.numel();
            shape
        }
        LayerSpec::TokenEmbedding { dim, .. } => {
            let Shape::Ids(n) = shape else {
                return Err(shape_error("token_embedding", shape));
            };
            Shape::Tokens { n, d: dim }
        }
        LayerSpec::Attention { dim, heads, .. } => {
            let Shape::Tokens { n, .. } = shape else {
                return Err(shape_error("attention", shape));
            };
            expect_features("attention", shape, dim)?;
            let (n, d) = (n as u64, dim as u64);
            // QKV projection, scores, weighted sum, output projection.
            ops.macs = n * d * 3 * d + n * n * d + n * n * d + n * d * d;
            ops.bias = n * 3 * d + n * d;
            ops.activation = heads as u64 * n * n;
            shape
        }
        LayerSpec::SelectToken => {
            let Shape::Tokens { d, .. } = shape else {
                return Err(shape_error("select_token", shape));
            };
            Shape::Vector(d)
        }
    };
    Ok((ops, out))
}

/// Per-view GFLOPs of a model description on one input.
pub fn count_model_flops(layers: &[LayerSpec], input: Shape, policy: &CountingPolicy) -> Result<f64> {
    Ok(count_ops(layers, input)?.0.flops(policy) as f64 / 1e9)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerBranch {
    pub name: String,
    pub per_view_gflops: f64,
    pub temporal_views: usize,
    pub spatial_crops: usize,
}

impl LedgerBranch {
    pub fn new(name: &str, per_view_gflops: f64, temporal_views: usize, spatial_crops: usize) -> Self {
        Self { name: name.to_string(), per_view_gflops, temporal_views, spatial_crops }
    }

    pub fn gflops(&self) -> f64 {
        self.per_view_gflops * (self.temporal_views * self.spatial_crops) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsLedger {
    pub name: String,
    pub branches: Vec<LedgerBranch>,
    pub head_gflops: f64,
}

impl FlopsLedger {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.head_gflops) {
            return Err(Error::Config(format!("ledger `{}`: head cost must be non-negative", self.name)));
        }
        for b in &self.branches {
            if !ok(b.per_view_gflops) {
                return Err(Error::Config(format!("branch `{}`: per-view cost must be non-negative", b.name)));
            }
            if b.temporal_views == 0 || b.spatial_crops == 0 {
                return Err(Error::Config(format!("branch `{}`: view counts must be at least 1", b.name)));
            }
        }
        Ok(())
    }
}

/// Sum over branches of per-view cost times views, plus the head.
pub fn flops_total(ledger: &FlopsLedger) -> f64 {
    ledger.branches.iter().map(LedgerBranch::gflops).sum::<f64>() + ledger.head_gflops
}

/// Models with a built-in description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelRef {
    /// 2-channel EfficientNet-B0 with its input normalisation, no classifier.
    MvBackbone,
    /// MV backbone plus the linear classifier.
    MvClassifier,
    /// ViT-B/32 image tower.
    ClipImage,
    FusionHead,
}

impl ModelRef {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mv-backbone" => Ok(Self::MvBackbone),
            "mv-classifier" => Ok(Self::MvClassifier),
            "clip-vit-b32-image" => Ok(Self::ClipImage),
            "fusion-head" => Ok(Self::FusionHead),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (mv-backbone | mv-classifier | clip-vit-b32-image | fusion-head)"
            ))),
        }
    }

    /// Layer description and per-view input shape at `resolution`.
    pub fn describe(self, classes: usize, resolution: usize) -> (Vec<LayerSpec>, Shape) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let map = |c| Shape::Map { c, h: resolution, w: resolution };
        match self {
            Self::MvBackbone => (crate::motion::MotionModel::new(classes, &mut rng).describe_backbone(), map(2)),
            Self::MvClassifier => (crate::motion::MotionModel::new(classes, &mut rng).describe(), map(2)),
            Self::ClipImage => {
                let cfg = mvfuse_nn::clip::VisionConfig {
                    image_size: resolution,
                    ..mvfuse_nn::clip::VisionConfig::vit_b32()
                };
                (mvfuse_nn::clip::describe_vision(&cfg), map(3))
            }
            Self::FusionHead => {
                (crate::fusion::FusionHead::describe_for(classes), Shape::Vector(crate::dataset_io::cache::FUSED_DIM))
            }
        }
    }

    pub fn gflops(self, classes: usize, resolution: usize, policy: &CountingPolicy) -> Result<f64> {
        let (layers, shape) = self.describe(classes, resolution);
        count_model_flops(&layers, shape, policy)
    }
}

/// Ledgers for the three in-scope rows of the efficiency table: zero-shot
/// appearance (1 view), MV-only (32 views) and fusion (appearance once,
/// motion backbone and fusion head per view).
pub fn builtin_ledgers(policy: &CountingPolicy, classes: usize, views: usize) -> Result<Vec<FlopsLedger>> {
    let clip = ModelRef::ClipImage.gflops(classes, 224, policy)?;
    let mv_cls = ModelRef::MvClassifier.gflops(classes, 224, policy)?;
    let mv = ModelRef::MvBackbone.gflops(classes, 224, policy)?;
    let head = ModelRef::FusionHead.gflops(classes, 224, policy)?;
    Ok(vec![
        FlopsLedger {
            name: "clip-only".into(),
            branches: vec![LedgerBranch::new("appearance", clip, 1, 1)],
            head_gflops: 0.0,
        },
        FlopsLedger {
            name: "mv-only".into(),
            branches: vec![LedgerBranch::new("motion", mv_cls, views, 1)],
            head_gflops: 0.0,
        },
        FlopsLedger {
            name: "fusion".into(),
            branches: vec![LedgerBranch::new("appearance", clip, 1, 1), LedgerBranch::new("motion", mv, views, 1)],
            head_gflops: head * views as f64,
        },
    ])
}

/// Aligned text table plus CSV rows.
pub fn render_flops_table(ledgers: &[FlopsLedger], policy: &CountingPolicy) -> (String, String) {
    let mut text = String::new();
    let mut csv = String::from("model,branch,per_view_gflops,temporal_views,spatial_crops,gflops\n");
    let _ = writeln!(text, "counting policy: {}", policy.describe());
    let _ =
        writeln!(text, "{:<12} {:<12} {:>14} {:>6} {:>6} {:>10}", "model", "branch", "per-view GF", "T", "S", "GFLOPs");
    for l in ledgers {
        for b in &l.branches {
            let _ = writeln!(
                text,
                "{:<12} {:<12} {:>14.5} {:>6} {:>6} {:>10.4}",
                l.name,
                b.name,
                b.per_view_gflops,
                b.temporal_views,
                b.spatial_crops,
                b.gflops()
            );
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                l.name,
                b.name,
                b.per_view_gflops,
                b.temporal_views,
                b.spatial_crops,
                b.gflops()
            );
        }
        if l.head_gflops > 0.0 {
            let _ =
                writeln!(text, "{:<12} {:<12} {:>14} {:>6} {:>6} {:>10.4}", l.name, "head", "", "", "", l.head_gflops);
            let _ = writeln!(csv, "{},head,,,,{}", l.name, l.head_gflops);
        }
        let total = flops_total(l);
        let _ = writeln!(text, "{:<12} {:<12} {:>14} {:>6} {:>6} {:>10.4}", l.name, "TOTAL", "", "", "", total);
        let _ = writeln!(csv, "{},total,,,,{total}", l.name);
    }
    (text, csv)
}

// Declarative ledger files.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerFile {
    #[serde(default = "default_policy")]
    policy: String,
    #[serde(default = "default_classes")]
    classes: usize,
    #[serde(default = "default_resolution")]
    resolution: usize,
    ledger: Vec<LedgerDecl>,
}

fn default_policy() -> String {
    "macs".into()
}
fn default_classes() -> usize {
    101
}
fn default_resolution() -> usize {
    224
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerDecl {
    name: String,
    #[serde(default)]
    head_gflops: Option<f64>,
    #[serde(default)]
    head_model: Option<String>,
    /// Multiplier on a model-derived head cost.
    #[serde(default = "one")]
    head_applications: usize,
    #[serde(default)]
    branch: Vec<BranchDecl>,
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchDecl {
    name: String,
    #[serde(default)]
    per_view_gflops: Option<f64>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    input: Option<Vec<usize>>,
    #[serde(default)]
    layers: Option<Vec<toml::Value>>,
    #[serde(default = "one")]
    temporal_views: usize,
    #[serde(default = "one")]
    spatial_crops: usize,
}

const LAYER_KINDS: &[&str] = &[
    "conv2d",
    "linear",
    "batchnorm",
    "layernorm",
    "activation",
    "global_avg_pool",
    "unflatten",
    "dropout",
    "residual",
    "gate",
    "attention",
    "image_to_tokens",
    "class_token",
    "positional_embedding",
    "token_embedding",
    "select_token",
];

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerDecl {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        groups: usize,
        #[serde(default)]
        bias: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    Batchnorm {
        channels: usize,
    },
    Layernorm {
        dim: usize,
    },
    Activation {
        function: String,
    },
    GlobalAvgPool,
    Unflatten,
    Dropout {
        #[serde(default)]
        p: f32,
    },
    Residual {
        body: Vec<toml::Value>,
    },
    Gate {
        body: Vec<toml::Value>,
    },
    Attention {
        dim: usize,
        heads: usize,
        #[serde(default)]
        causal: bool,
    },
    ImageToTokens,
    ClassToken {
        dim: usize,
    },
    PositionalEmbedding {
        tokens: usize,
        dim: usize,
    },
    TokenEmbedding {
        vocab: usize,
        dim: usize,
    },
    SelectToken,
}

fn yes() -> bool {
    true
}

/// Parses layer tables, rejecting unknown kinds with
/// [`Error::UnsupportedLayer`].
pub fn parse_layers(values: &[toml::Value]) -> Result<Vec<LayerSpec>> {
    values.iter().map(parse_layer).collect()
}

fn parse_layer(v: &toml::Value) -> Result<LayerSpec> {
    let kind = v
        .get("kind")
        .and_then(toml::Value::as_str)
        .ok_or_else(|| Error::Config("layer table needs a string `kind`".into()))?;
    if !LAYER_KINDS.contains(&kind) {
        return Err(Error::UnsupportedLayer(kind.to_string()));
    }
    let decl: LayerDecl =
        v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("layer `{kind}`: {e}")))?;
    Ok(match decl {
        LayerDecl::Conv2d { in_channels, out_channels, kernel, stride, padding, groups, bias } => {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding, groups, bias }
        }
        LayerDecl::Linear { in_features, out_features, bias } => LayerSpec::Linear { in_features, out_features, bias },
        LayerDecl::Batchnorm { channels } => LayerSpec::BatchNorm { channels },
        LayerDecl::Layernorm { dim } => LayerSpec::LayerNorm { dim },
        LayerDecl::Activation { function } => LayerSpec::Activation(
            ActivationKind::from_name(&function)
                .ok_or_else(|| Error::UnsupportedLayer(format!("activation {function}")))?,
        ),
        LayerDecl::GlobalAvgPool => LayerSpec::GlobalAvgPool,
        LayerDecl::Unflatten => LayerSpec::Unflatten,
        LayerDecl::Dropout { p } => LayerSpec::Dropout { p },
        LayerDecl::Residual { body } => LayerSpec::Residual(parse_layers(&body)?),
        LayerDecl::Gate { body } => LayerSpec::Gate(parse_layers(&body)?),
        LayerDecl::Attention { dim, heads, causal } => LayerSpec::Attention { dim, heads, causal },
        LayerDecl::ImageToTokens => LayerSpec::ImageToTokens,
        LayerDecl::ClassToken { dim } => LayerSpec::ClassToken { dim },
        LayerDecl::PositionalEmbedding { tokens, dim } => LayerSpec::PositionalEmbedding { tokens, dim },
        LayerDecl::TokenEmbedding { vocab, dim } => LayerSpec::TokenEmbedding { vocab, dim },
        LayerDecl::SelectToken => LayerSpec::SelectToken,
    })
}

fn input_shape(dims: &[usize]) -> Result<Shape> {
    match *dims {
        [c, h, w] => Ok(Shape::Map { c, h, w }),
        [d] => Ok(Shape::Vector(d)),
        _ => Err(Error::Config(format!("input must be [c, h, w] or [d], got {dims:?}"))),
    }
}

/// Parses a TOML ledger file into resolved ledgers and its counting policy.
pub fn parse_ledger_file(text: &str) -> Result<(Vec<FlopsLedger>, CountingPolicy)> {
    let file: LedgerFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let policy = CountingPolicy::from_name(&file.policy)?;
    let mut out = Vec::new();
    for l in file.ledger {
        let mut branches = Vec::new();
        for b in l.branch {
            let per_view = match (b.per_view_gflops, &b.model, &b.layers) {
                (Some(v), None, None) => v,
                (None, Some(m), None) => ModelRef::from_name(m)?.gflops(file.classes, file.resolution, &policy)?,
                (None, None, Some(layers)) => {
                    let dims = b.input.as_ref().ok_or_else(|| {
                        Error::Config(format!("branch `{}`: `layers` needs an `input` shape", b.name))
                    })?;
                    count_model_flops(&parse_layers(layers)?, input_shape(dims)?, &policy)?
                }
                _ => {
                    return Err(Error::Config(format!(
                        "branch `{}`: give exactly one of per_view_gflops, model, layers",
                        b.name
                    )))
                }
            };
            branches.push(LedgerBranch::new(&b.name, per_view, b.temporal_views, b.spatial_crops));
        }
        let head_gflops = match (l.head_gflops, &l.head_model) {
            (Some(v), None) => v,
            (None, Some(m)) => {
                ModelRef::from_name(m)?.gflops(file.classes, file.resolution, &policy)? * l.head_applications as f64
            }
            (None, None) => 0.0,
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!("ledger `{}`: give head_gflops or head_model, not both", l.name)))
            }
        };
        let ledger = FlopsLedger { name: l.name, branches, head_gflops };
        ledger.validate()?;
        out.push(ledger);
    }
    Ok((out, policy))
}

pub fn read_ledger_file(path: &Path) -> Result<(Vec<FlopsLedger>, CountingPolicy)> {
    use crate::error::IoContext;
    parse_ledger_file(&std::fs::read_to_string(path).at(path)?)
}
