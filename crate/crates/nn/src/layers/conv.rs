use super::{kaiming_normal_fan_out, Module};
use crate::arch::LayerSpec;
use crate::gemm::sgemm;
use crate::par;
use crate::param::{join, Param, Parameterized};
use crate::tensor::Tensor;
use rand::RngCore;

/// Samples processed sequentially inside one parallel task during backward.
/// Fixed so gradient summation order does not depend on the thread count.
const BACKWARD_CHUNK: usize = 4;
const BATCHED_PLANE_MAX: usize = 64;

/// 2-d convolution over NCHW input with square kernels and optional groups.
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        assert!(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0);
        assert!(kernel >= 1 && stride >= 1);
        let per = in_channels / groups * kernel * kernel;
        let n = out_channels * per;
        let fan_out = out_channels / groups * kernel * kernel;
        let w = kaiming_normal_fan_out(n, fan_out, rng);
        let weight = Param::weight(Tensor::from_vec(&[out_channels, in_channels / groups, kernel, kernel], w).unwrap());
        let bias = bias.then(|| Param::weight(Tensor::zeros(&[out_channels])));
        Self { in_channels, out_channels, kernel, stride, padding, groups, weight, bias, input: None }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        assert!(h + 2 * self.padding >= k && w + 2 * self.padding >= k, "conv input {h}x{w} smaller than kernel {k}");
        ((h + 2 * self.padding - k) / self.stride + 1, (w + 2 * self.padding - k) / self.stride + 1)
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn geom(&self, x: &Tensor) -> Geom {
        let (_, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv expected {} channels, got {c}", self.in_channels);
        let (ho, wo) = self.out_hw(h, w);
        Geom { c, h, w, ho, wo }
    }

    fn im2col(&self, x: &[f32], c0: usize, cg: usize, g: Geom, col: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let plane = g.ho * g.wo;
        for ci in 0..cg {
            let src = &x[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p;
                        let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let in_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { in_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], c0: usize, cg: usize, g: Geom, dx: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let plane = g.ho * g.wo;
        for ci in 0..cg {
            let dst = &mut dx[(c0 + ci) * g.h * g.w..(c0 + ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * plane..(row + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Range of output columns whose input column `ox*s + kx - p` is in bounds.
    fn valid_range(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let lo_num = p - kx as isize;
        let lo = if lo_num <= 0 { 0 } else { ((lo_num + s - 1) / s) as usize };
        let hi_num = w as isize - 1 + p - kx as isize;
        let hi = if hi_num < 0 { 0 } else { ((hi_num / s) + 1) as usize };
        (lo.min(wo), hi.min(wo))
    }

    fn depthwise_forward(&self, x: &[f32], g: Geom, out: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let wts = self.weight.value.data();
        for c in 0..g.c {
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            let y = &mut out[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
            let b = self.bias.as_ref().map_or(0.0, |b| b.value.data()[c]);
            y.iter_mut().for_each(|v| *v = b);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wts[(c * k + ky) * k + kx];
                    let (lo, hi) = self.valid_range(kx, g.w, g.wo);
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let row_in = &xin[iy as usize * g.w..];
                        let row_out = &mut y[oy * g.wo..(oy + 1) * g.wo];
                        for ox in lo..hi {
                            row_out[ox] += wv * row_in[ox * s + kx - p as usize];
                        }
                    }
                }
            }
        }
    }

    fn depthwise_backward(&self, x: &[f32], dy: &[f32], g: Geom, dx: &mut [f32], dw: &mut [f32], db: &mut [f32]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let wts = self.weight.value.data();
        for c in 0..g.c {
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
            let dyc = &dy[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
            db[c] += dyc.iter().sum::<f32>();
            for ky in 0..k {
                for kx in 0..k {
                    let wi = (c * k + ky) * k + kx;
                    let wv = wts[wi];
                    let (lo, hi) = self.valid_range(kx, g.w, g.wo);
                    let mut acc = 0.0f32;
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = iy as usize * g.w;
                        let drow = &dyc[oy * g.wo..(oy + 1) * g.wo];
                        for (ox, &d) in drow.iter().enumerate().take(hi).skip(lo) {
                            let ix = base + ox * s + kx - p as usize;
                            acc += d * xin[ix];
                            dxc[ix] += wv * d;
                        }
                    }
                    dw[wi] += acc;
                }
            }
        }
    }

    /// Small-plane 1x1 convolutions run as one GEMM over the whole batch;
    /// per-sample products would be matrix-vector sized.
    fn batched_pointwise(&self, g: Geom) -> bool {
        self.is_pointwise() && self.groups == 1 && g.ho * g.wo <= BATCHED_PLANE_MAX
    }

    fn pointwise_batched_forward(&self, x: &Tensor, n: usize, g: Geom) -> Tensor {
        let (c, o, plane) = (self.in_channels, self.out_channels, g.ho * g.wo);
        let xp = to_channel_major(x.data(), n, c, plane);
        let mut yp = vec![0.0f32; o * n * plane];
        sgemm(o, c, n * plane, self.weight.value.data(), false, &xp, false, &mut yp, false);
        if let Some(b) = &self.bias {
            for (row, bv) in yp.chunks_mut(n * plane).zip(b.value.data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        Tensor::from_vec(&[n, o, g.ho, g.wo], from_channel_major(&yp, n, o, plane)).unwrap()
    }

    fn pointwise_batched_backward(&mut self, x: &Tensor, grad: &Tensor, n: usize, g: Geom) -> Tensor {
        let (c, o, plane) = (self.in_channels, self.out_channels, g.ho * g.wo);
        let xp = to_channel_major(x.data(), n, c, plane);
        let dyp = to_channel_major(grad.data(), n, o, plane);
        sgemm(o, n * plane, c, &dyp, false, &xp, true, self.weight.grad.data_mut(), true);
        if let Some(b) = &mut self.bias {
            for (d, row) in b.grad.data_mut().iter_mut().zip(dyp.chunks(n * plane)) {
                *d += row.iter().sum::<f32>();
            }
        }
        let mut dxp = vec![0.0f32; c * n * plane];
        sgemm(c, o, n * plane, self.weight.value.data(), true, &dyp, false, &mut dxp, false);
        Tensor::from_vec(x.shape(), from_channel_major(&dxp, n, c, plane)).unwrap()
    }

    fn forward_sample(&self, x: &[f32], g: Geom, out: &mut [f32]) {
        if self.is_depthwise() {
            self.depthwise_forward(x, g, out);
            return;
        }
        let cg = self.in_channels / self.groups;
        let og = self.out_channels / self.groups;
        let kk = cg * self.kernel * self.kernel;
        let plane = g.ho * g.wo;
        let wts = self.weight.value.data();
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; kk * plane] };
        for gi in 0..self.groups {
            let wg = &wts[gi * og * kk..(gi + 1) * og * kk];
            let yg = &mut out[gi * og * plane..(gi + 1) * og * plane];
            if self.is_pointwise() {
                let xg = &x[gi * cg * plane..(gi + 1) * cg * plane];
                sgemm(og, kk, plane, wg, false, xg, false, yg, false);
            } else {
                self.im2col(x, gi * cg, cg, g, &mut col);
                sgemm(og, kk, plane, wg, false, &col, false, yg, false);
            }
        }
        if let Some(b) = &self.bias {
            for (o, bv) in b.value.data().iter().enumerate() {
                out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_sample(
        &self,
        x: &[f32],
        dy: &[f32],
        g: Geom,
        dx: &mut [f32],
        dw: &mut [f32],
        db: &mut [f32],
        col: &mut Vec<f32>,
    ) {
        if self.is_depthwise() {
            self.depthwise_backward(x, dy, g, dx, dw, db);
            return;
        }
        let cg = self.in_channels / self.groups;
        let og = self.out_channels / self.groups;
        let kk = cg * self.kernel * self.kernel;
        let plane = g.ho * g.wo;
        let wts = self.weight.value.data();
        for (o, d) in db.iter_mut().enumerate() {
            *d += dy[o * plane..(o + 1) * plane].iter().sum::<f32>();
        }
        if !self.is_pointwise() && col.len() != kk * plane {
            col.resize(kk * plane, 0.0);
        }
        for gi in 0..self.groups {
            let wg = &wts[gi * og * kk..(gi + 1) * og * kk];
            let dwg = &mut dw[gi * og * kk..(gi + 1) * og * kk];
            let dyg = &dy[gi * og * plane..(gi + 1) * og * plane];
            if self.is_pointwise() {
                let xg = &x[gi * cg * plane..(gi + 1) * cg * plane];
                sgemm(og, plane, kk, dyg, false, xg, true, dwg, true);
                let dxg = &mut dx[gi * cg * plane..(gi + 1) * cg * plane];
                sgemm(kk, og, plane, wg, true, dyg, false, dxg, true);
            } else {
                self.im2col(x, gi * cg, cg, g, col);
                sgemm(og, plane, kk, dyg, false, col, true, dwg, true);
                sgemm(kk, og, plane, wg, true, dyg, false, col, false);
                self.col2im(col, gi * cg, cg, g, dx);
            }
        }
    }
}

/// `[N, C, P]` to `[C, N * P]`.
fn to_channel_major(x: &[f32], n: usize, c: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let src = &x[(s * c + ch) * plane..(s * c + ch + 1) * plane];
            out[(ch * n + s) * plane..(ch * n + s + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// `[C, N * P]` to `[N, C, P]`.
fn from_channel_major(x: &[f32], n: usize, c: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for ch in 0..c {
        for s in 0..n {
            let src = &x[(ch * n + s) * plane..(ch * n + s + 1) * plane];
            out[(s * c + ch) * plane..(s * c + ch + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

impl Module for Conv2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        let g = self.geom(x);
        let n = x.shape()[0];
        if self.batched_pointwise(g) {
            return self.pointwise_batched_forward(x, n, g);
        }
        let mut out = Tensor::zeros(&[n, self.out_channels, g.ho, g.wo]);
        let in_stride = g.c * g.h * g.w;
        let out_stride = self.out_channels * g.ho * g.wo;
        let xd = x.data();
        par::for_each_chunk_mut(out.data_mut(), out_stride, |i, o| {
            self.forward_sample(&xd[i * in_stride..(i + 1) * in_stride], g, o);
        });
        out
    }

    fn forward(&mut self, x: &Tensor, _rng: &mut dyn RngCore) -> Tensor {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.input.take().expect("conv backward without forward");
        let g = self.geom(&x);
        let n = x.shape()[0];
        if self.batched_pointwise(g) {
            return self.pointwise_batched_backward(&x, grad, n, g);
        }
        let in_stride = g.c * g.h * g.w;
        let out_stride = self.out_channels * g.ho * g.wo;
        let wlen = self.weight.value.numel();
        let chunks = n.div_ceil(BACKWARD_CHUNK);
        let this = &*self;
        let parts = par::map_range(chunks, |ci| {
            let lo = ci * BACKWARD_CHUNK;
            let hi = (lo + BACKWARD_CHUNK).min(n);
            let mut dx = vec![0.0f32; (hi - lo) * in_stride];
            let mut dw = vec![0.0f32; wlen];
            let mut db = vec![0.0f32; this.out_channels];
            let mut col = Vec::new();
            for s in lo..hi {
                this.backward_sample(
                    &x.data()[s * in_stride..(s + 1) * in_stride],
                    &grad.data()[s * out_stride..(s + 1) * out_stride],
                    g,
                    &mut dx[(s - lo) * in_stride..(s - lo + 1) * in_stride],
                    &mut dw,
                    &mut db,
                    &mut col,
                );
            }
            (dx, dw, db)
        });
        let mut dx_all = Vec::with_capacity(n * in_stride);
        for (dx, dw, db) in parts {
            dx_all.extend_from_slice(&dx);
            self.weight.grad.data_mut().iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
            if let Some(bias) = &mut self.bias {
                bias.grad.data_mut().iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            }
        }
        Tensor::from_vec(x.shape(), dx_all).unwrap()
    }

    fn describe(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
            bias: self.bias.is_some(),
        }]
    }
}

impl Parameterized for Conv2d {
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
