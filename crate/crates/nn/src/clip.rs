//! CLIP ViT image tower and causal text tower, inference only.
//!
//! Weights use the original OpenAI state-dict names (`visual.conv1.weight`,
//! `transformer.resblocks.{i}.attn.in_proj_weight`, ...) stored as f32.
//! Attention heads are inferred as `width / 64`, which holds for every
//! published CLIP checkpoint.

use crate::arch::LayerSpec;
use crate::gemm::sgemm;
use crate::layers::ActivationKind;
use crate::tensor::Tensor;
use crate::{par, NnError, Result};
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

const LN_EPS: f32 = 1e-5;
pub const HEAD_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisionConfig {
    pub image_size: usize,
    pub patch: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl VisionConfig {
    pub fn vit_b32() -> Self {
        Self { image_size: 224, patch: 32, width: 768, layers: 12, heads: 12, embed_dim: 512 }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextConfig {
    pub context: usize,
    pub vocab: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl TextConfig {
    pub fn vit_b32() -> Self {
        Self { context: 77, vocab: 49408, width: 512, layers: 12, heads: 8, embed_dim: 512 }
    }
}

fn take(t: &BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
    let v = t.get(name).ok_or_else(|| NnError::MissingTensor(name.to_string()))?;
    if v.shape() != shape {
        return Err(NnError::Shape(format!("{name}: expected {shape:?}, found {:?}", v.shape())));
    }
    Ok(v.data().to_vec())
}

struct LayerNorm {
    w: Vec<f32>,
    b: Vec<f32>,
}

impl LayerNorm {
    fn load(t: &BTreeMap<String, Tensor>, p: &str, d: usize) -> Result<Self> {
        Ok(Self { w: take(t, &format!("{p}.weight"), &[d])?, b: take(t, &format!("{p}.bias"), &[d])? })
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let d = self.w.len();
        let mut out = vec![0.0; x.len()];
        for (row, o) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS as f64).sqrt();
            for i in 0..d {
                o[i] = ((row[i] as f64 - mean) * inv) as f32 * self.w[i] + self.b[i];
            }
        }
        out
    }
}

/// `x [n, in] @ w^T [in, out] + b`.
fn linear(x: &[f32], n: usize, w: &[f32], b: &[f32], inp: usize, out: usize) -> Vec<f32> {
    let mut y = vec![0.0; n * out];
    for r in y.chunks_exact_mut(out) {
        r.copy_from_slice(b);
    }
    sgemm(n, inp, out, x, false, w, true, &mut y, true);
    y
}

struct Block {
    ln1: LayerNorm,
    in_w: Vec<f32>,
    in_b: Vec<f32>,
    out_w: Vec<f32>,
    out_b: Vec<f32>,
    ln2: LayerNorm,
    fc_w: Vec<f32>,
    fc_b: Vec<f32>,
    proj_w: Vec<f32>,
    proj_b: Vec<f32>,
}

impl Block {
    fn load(t: &BTreeMap<String, Tensor>, p: &str, d: usize) -> Result<Self> {
        let g = |n: &str, s: &[usize]| take(t, &format!("{p}.{n}"), s);
        Ok(Self {
            ln1: LayerNorm::load(t, &format!("{p}.ln_1"), d)?,
            in_w: g("attn.in_proj_weight", &[3 * d, d])?,
            in_b: g("attn.in_proj_bias", &[3 * d])?,
            out_w: g("attn.out_proj.weight", &[d, d])?,
            out_b: g("attn.out_proj.bias", &[d])?,
            ln2: LayerNorm::load(t, &format!("{p}.ln_2"), d)?,
            fc_w: g("mlp.c_fc.weight", &[4 * d, d])?,
            fc_b: g("mlp.c_fc.bias", &[4 * d])?,
            proj_w: g("mlp.c_proj.weight", &[d, 4 * d])?,
            proj_b: g("mlp.c_proj.bias", &[d])?,
        })
    }

    fn apply(&self, x: &mut [f32], n: usize, d: usize, heads: usize, causal: bool) {
        let h = self.ln1.apply(x);
        let qkv = linear(&h, n, &self.in_w, &self.in_b, d, 3 * d);
        let hd = d / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let mut ctx = vec![0.0; n * d];
        let mut q = vec![0.0; n * hd];
        let mut k = vec![0.0; n * hd];
        let mut v = vec![0.0; n * hd];
        let mut scores = vec![0.0; n * n];
        let mut o = vec![0.0; n * hd];
        for head in 0..heads {
            for i in 0..n {
                let row = &qkv[i * 3 * d..(i + 1) * 3 * d];
                for j in 0..hd {
                    q[i * hd + j] = row[head * hd + j] * scale;
                    k[i * hd + j] = row[d + head * hd + j];
                    v[i * hd + j] = row[2 * d + head * hd + j];
                }
            }
            sgemm(n, hd, n, &q, false, &k, true, &mut scores, false);
            for i in 0..n {
                let r = &mut scores[i * n..(i + 1) * n];
                let lim = if causal { i + 1 } else { n };
                let max = r[..lim].iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0;
                for s in r[..lim].iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in r[..lim].iter_mut() {
                    *s /= sum;
                }
                r[lim..].fill(0.0);
            }
            sgemm(n, n, hd, &scores, false, &v, false, &mut o, false);
            for i in 0..n {
                ctx[i * d + head * hd..i * d + (head + 1) * hd].copy_from_slice(&o[i * hd..(i + 1) * hd]);
            }
        }
        let a = linear(&ctx, n, &self.out_w, &self.out_b, d, d);
        x.iter_mut().zip(&a).for_each(|(x, a)| *x += a);
        let h = self.ln2.apply(x);
        let mut f = linear(&h, n, &self.fc_w, &self.fc_b, d, 4 * d);
        f.iter_mut().for_each(|v| *v = ActivationKind::QuickGelu.apply(*v));
        let m = linear(&f, n, &self.proj_w, &self.proj_b, 4 * d, d);
        x.iter_mut().zip(&m).for_each(|(x, m)| *x += m);
    }
}

fn blocks_spec(width: usize, heads: usize, layers: usize, causal: bool) -> Vec<LayerSpec> {
    let mut v = Vec::new();
    for _ in 0..layers {
        v.push(LayerSpec::Residual(vec![
            LayerSpec::LayerNorm { dim: width },
            LayerSpec::Attention { dim: width, heads, causal },
        ]));
        v.push(LayerSpec::Residual(vec![
            LayerSpec::LayerNorm { dim: width },
            LayerSpec::Linear { in_features: width, out_features: 4 * width, bias: true },
            LayerSpec::Activation(ActivationKind::QuickGelu),
            LayerSpec::Linear { in_features: 4 * width, out_features: width, bias: true },
        ]));
    }
    v
}

/// Layer description of the image tower, from its configuration alone.
pub fn describe_vision(c: &VisionConfig) -> Vec<LayerSpec> {
    let d = c.width;
    let mut v = vec![
        LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: d,
            kernel: c.patch,
            stride: c.patch,
            padding: 0,
            groups: 1,
            bias: false,
        },
        LayerSpec::ImageToTokens,
        LayerSpec::ClassToken { dim: d },
        LayerSpec::PositionalEmbedding { tokens: c.grid() * c.grid() + 1, dim: d },
        LayerSpec::LayerNorm { dim: d },
    ];
    v.extend(blocks_spec(d, c.heads, c.layers, false));
    v.push(LayerSpec::SelectToken);
    v.push(LayerSpec::LayerNorm { dim: d });
    v.push(LayerSpec::Linear { in_features: d, out_features: c.embed_dim, bias: false });
    v
}

pub fn describe_text(c: &TextConfig) -> Vec<LayerSpec> {
    let mut v = vec![
        LayerSpec::TokenEmbedding { vocab: c.vocab, dim: c.width },
        LayerSpec::PositionalEmbedding { tokens: c.context, dim: c.width },
    ];
    v.extend(blocks_spec(c.width, c.heads, c.layers, true));
    v.push(LayerSpec::SelectToken);
    v.push(LayerSpec::LayerNorm { dim: c.width });
    v.push(LayerSpec::Linear { in_features: c.width, out_features: c.embed_dim, bias: false });
    v
}

fn count_blocks(t: &BTreeMap<String, Tensor>, prefix: &str) -> usize {
    (0..).take_while(|i| t.contains_key(&format!("{prefix}.resblocks.{i}.ln_1.weight"))).count()
}

/// `x [n, a] @ p [a, b]`.
fn project(x: &[f32], p: &[f32], a: usize, b: usize) -> Vec<f32> {
    let mut y = vec![0.0; b];
    sgemm(1, a, b, x, false, p, false, &mut y, false);
    y
}

pub struct VisionTower {
    pub config: VisionConfig,
    conv1: Vec<f32>,
    class_embedding: Vec<f32>,
    positional: Vec<f32>,
    ln_pre: LayerNorm,
    blocks: Vec<Block>,
    ln_post: LayerNorm,
    proj: Vec<f32>,
}

impl VisionTower {
    /// Builds the tower from tensors named `visual.*`, inferring its shape.
    pub fn from_tensors(t: &BTreeMap<String, Tensor>) -> Result<Self> {
        let conv = t.get("visual.conv1.weight").ok_or_else(|| NnError::MissingTensor("visual.conv1.weight".into()))?;
        let (width, patch) = (conv.shape()[0], conv.shape()[2]);
        let pos = t
            .get("visual.positional_embedding")
            .ok_or_else(|| NnError::MissingTensor("visual.positional_embedding".into()))?;
        let grid = ((pos.shape()[0] - 1) as f64).sqrt().round() as usize;
        let proj = t.get("visual.proj").ok_or_else(|| NnError::MissingTensor("visual.proj".into()))?;
        let config = VisionConfig {
            image_size: grid * patch,
            patch,
            width,
            layers: count_blocks(t, "visual.transformer"),
            heads: (width / HEAD_DIM).max(1),
            embed_dim: proj.shape()[1],
        };
        let blocks = (0..config.layers)
            .map(|i| Block::load(t, &format!("visual.transformer.resblocks.{i}"), width))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            conv1: take(t, "visual.conv1.weight", &[width, 3, patch, patch])?,
            class_embedding: take(t, "visual.class_embedding", &[width])?,
            positional: take(t, "visual.positional_embedding", &[grid * grid + 1, width])?,
            ln_pre: LayerNorm::load(t, "visual.ln_pre", width)?,
            blocks,
            ln_post: LayerNorm::load(t, "visual.ln_post", width)?,
            proj: take(t, "visual.proj", &[width, config.embed_dim])?,
        })
    }

    fn encode_one(&self, img: &[f32]) -> Vec<f32> {
        let c = self.config;
        let (g, p, d, s) = (c.grid(), c.patch, c.width, c.image_size);
        let n = g * g + 1;
        // Patchify into [g*g, 3*p*p] rows matching the conv weight layout.
        let kk = 3 * p * p;
        let mut patches = vec![0.0; g * g * kk];
        for gy in 0..g {
            for gx in 0..g {
                let row = &mut patches[(gy * g + gx) * kk..(gy * g + gx + 1) * kk];
                for ch in 0..3 {
                    for y in 0..p {
                        let src = ch * s * s + (gy * p + y) * s + gx * p;
                        row[ch * p * p + y * p..ch * p * p + (y + 1) * p].copy_from_slice(&img[src..src + p]);
                    }
                }
            }
        }
        let mut x = vec![0.0; n * d];
        x[..d].copy_from_slice(&self.class_embedding);
        sgemm(g * g, kk, d, &patches, false, &self.conv1, true, &mut x[d..], false);
        x.iter_mut().zip(&self.positional).for_each(|(x, p)| *x += p);
        let mut x = self.ln_pre.apply(&x);
        for b in &self.blocks {
            b.apply(&mut x, n, d, c.heads, false);
        }
        let cls = self.ln_post.apply(&x[..d]);
        project(&cls, &self.proj, d, c.embed_dim)
    }

    /// `[N, 3, S, S]` normalised images to `[N, embed_dim]` (not L2-normalised).
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = images.dims4();
        let s = self.config.image_size;
        if c != 3 || h != s || w != s {
            return Err(NnError::Shape(format!("expected [N, 3, {s}, {s}], got {:?}", images.shape())));
        }
        let per = 3 * s * s;
        let rows = par::map_range(n, |i| self.encode_one(&images.data()[i * per..(i + 1) * per]));
        Tensor::from_vec(&[n, self.config.embed_dim], rows.concat())
    }

    pub fn describe(&self) -> Vec<LayerSpec> {
        describe_vision(&self.config)
    }
}

pub struct TextTower {
    pub config: TextConfig,
    token_embedding: Vec<f32>,
    positional: Vec<f32>,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    proj: Vec<f32>,
}

impl TextTower {
    pub fn from_tensors(t: &BTreeMap<String, Tensor>) -> Result<Self> {
        let tok =
            t.get("token_embedding.weight").ok_or_else(|| NnError::MissingTensor("token_embedding.weight".into()))?;
        let (vocab, width) = (tok.shape()[0], tok.shape()[1]);
        let pos = t.get("positional_embedding").ok_or_else(|| NnError::MissingTensor("positional_embedding".into()))?;
        let proj = t.get("text_projection").ok_or_else(|| NnError::MissingTensor("text_projection".into()))?;
        let config = TextConfig {
            context: pos.shape()[0],
            vocab,
            width,
            layers: count_blocks(t, "transformer"),
            heads: (width / HEAD_DIM).max(1),
            embed_dim: proj.shape()[1],
        };
        let blocks = (0..config.layers)
            .map(|i| Block::load(t, &format!("transformer.resblocks.{i}"), width))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            token_embedding: take(t, "token_embedding.weight", &[vocab, width])?,
            positional: take(t, "positional_embedding", &[config.context, width])?,
            blocks,
            ln_final: LayerNorm::load(t, "ln_final", width)?,
            proj: take(t, "text_projection", &[width, config.embed_dim])?,
        })
    }

    /// Encodes one token sequence. The sequence is zero-padded to the context
    /// length; the feature is read at the highest token id (end of text).
    fn encode_one(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let c = self.config;
        let (n, d) = (c.context, c.width);
        if tokens.is_empty() || tokens.len() > n {
            return Err(NnError::Shape(format!("token sequence length {} not in 1..={n}", tokens.len())));
        }
        let mut x = self.positional.clone();
        for (i, &t) in tokens.iter().enumerate() {
            let t = t as usize;
            if t >= c.vocab {
                return Err(NnError::Shape(format!("token id {t} outside vocabulary of {}", c.vocab)));
            }
            let e = &self.token_embedding[t * d..(t + 1) * d];
            x[i * d..(i + 1) * d].iter_mut().zip(e).for_each(|(x, e)| *x += e);
        }
        let pad = &self.token_embedding[..d];
        for i in tokens.len()..n {
            x[i * d..(i + 1) * d].iter_mut().zip(pad).for_each(|(x, e)| *x += e);
        }
        for b in &self.blocks {
            b.apply(&mut x, n, d, c.heads, true);
        }
        let eot = tokens.iter().enumerate().fold(0, |best, (i, &t)| if t > tokens[best] { i } else { best });
        let h = self.ln_final.apply(&x[eot * d..(eot + 1) * d]);
        Ok(project(&h, &self.proj, d, c.embed_dim))
    }

    pub fn encode(&self, batch: &[Vec<u32>]) -> Result<Tensor> {
        let rows = par::map_slice(batch, |_, t| self.encode_one(t)).into_iter().collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(&[batch.len(), self.config.embed_dim], rows.concat())
    }

    pub fn describe(&self) -> Vec<LayerSpec> {
        describe_text(&self.config)
    }
}

fn random_blocks(t: &mut BTreeMap<String, Tensor>, prefix: &str, d: usize, layers: usize, rng: &mut dyn RngCore) {
    for i in 0..layers {
        let p = format!("{prefix}.resblocks.{i}");
        for (n, s) in [
            ("attn.in_proj_weight", vec![3 * d, d]),
            ("attn.in_proj_bias", vec![3 * d]),
            ("attn.out_proj.weight", vec![d, d]),
            ("attn.out_proj.bias", vec![d]),
            ("mlp.c_fc.weight", vec![4 * d, d]),
            ("mlp.c_fc.bias", vec![4 * d]),
            ("mlp.c_proj.weight", vec![d, 4 * d]),
            ("mlp.c_proj.bias", vec![d]),
        ] {
            t.insert(format!("{p}.{n}"), random(&s, 0.02, rng));
        }
        for ln in ["ln_1", "ln_2"] {
            t.insert(format!("{p}.{ln}.weight"), Tensor::full(&[d], 1.0));
            t.insert(format!("{p}.{ln}.bias"), Tensor::zeros(&[d]));
        }
    }
}

fn random(shape: &[usize], std: f32, rng: &mut dyn RngCore) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("matching length")
}

/// A randomly initialised weight set with the OpenAI naming, for tests and
/// offline smoke runs.
pub fn random_weights(v: VisionConfig, t: TextConfig, rng: &mut dyn RngCore) -> BTreeMap<String, Tensor> {
    let mut m = BTreeMap::new();
    let dv = v.width;
    m.insert("visual.conv1.weight".into(), random(&[dv, 3, v.patch, v.patch], 0.02, rng));
    m.insert("visual.class_embedding".into(), random(&[dv], 0.02, rng));
    m.insert("visual.positional_embedding".into(), random(&[v.grid() * v.grid() + 1, dv], 0.02, rng));
    for ln in ["ln_pre", "ln_post"] {
        m.insert(format!("visual.{ln}.weight"), Tensor::full(&[dv], 1.0));
        m.insert(format!("visual.{ln}.bias"), Tensor::zeros(&[dv]));
    }
    random_blocks(&mut m, "visual.transformer", dv, v.layers, rng);
    m.insert("visual.proj".into(), random(&[dv, v.embed_dim], 0.05, rng));
    let dt = t.width;
    m.insert("token_embedding.weight".into(), random(&[t.vocab, dt], 0.02, rng));
    m.insert("positional_embedding".into(), random(&[t.context, dt], 0.01, rng));
    random_blocks(&mut m, "transformer", dt, t.layers, rng);
    m.insert("ln_final.weight".into(), Tensor::full(&[dt], 1.0));
    m.insert("ln_final.bias".into(), Tensor::zeros(&[dt]));
    m.insert("text_projection".into(), random(&[dt, t.embed_dim], 0.05, rng));
    m
}
