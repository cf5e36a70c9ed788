//! Forward and backward kernels for the layer kinds used by the network graph.
//!
//! All kernels are single-threaded and deterministic: reductions always run
//! in the same order, so repeated runs are bit-identical.

use rand::Rng;

use crate::tensor::{Shape4, Tensor};

/// Upper bound on the number of floats in one im2col tile.
const COL_TILE: usize = 1 << 22;

pub const NORM_EPS: f32 = 1e-3;
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvGeom {
    fn taps(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }

    fn rows_per_tile(&self, h: usize, w: usize) -> usize {
        (COL_TILE / (self.taps() * w).max(1)).clamp(1, h)
    }
}

/// Fills `cols[(ci*k+ky)*k+kx, (oy-r0)*w+ox]` for output rows `r0..r1`
/// with zero padding ("same" output size).
fn im2col(x: &[f32], g: &ConvGeom, h: usize, w: usize, r0: usize, r1: usize, cols: &mut [f32]) {
    let k = g.kernel;
    let half = (k / 2) as isize;
    let span = (r1 - r0) * w;
    for ci in 0..g.in_ch {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let dy = (ky as isize - half) * g.dilation as isize;
            for kx in 0..k {
                let dx = (kx as isize - half) * g.dilation as isize;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * span..(row + 1) * span];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).clamp(0, w as isize) as usize;
                for oy in r0..r1 {
                    let out = &mut dst[(oy - r0) * w..(oy - r0 + 1) * w];
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    out[..x_lo].fill(0.0);
                    out[x_hi..].fill(0.0);
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let s0 = (x_lo as isize + dx) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src_row[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `dx` (adjoint of [`im2col`]).
fn col2im(cols: &[f32], g: &ConvGeom, h: usize, w: usize, r0: usize, r1: usize, dx: &mut [f32]) {
    let k = g.kernel;
    let half = (k / 2) as isize;
    let span = (r1 - r0) * w;
    for ci in 0..g.in_ch {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let dy = (ky as isize - half) * g.dilation as isize;
            for kx in 0..k {
                let ddx = (kx as isize - half) * g.dilation as isize;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * span..(row + 1) * span];
                let x_lo = (-ddx).max(0) as usize;
                let x_hi = (w as isize - ddx).clamp(0, w as isize) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for oy in r0..r1 {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let s = &src[(oy - r0) * w + x_lo..(oy - r0) * w + x_hi];
                    let base = iy as usize * w + (x_lo as isize + ddx) as usize;
                    for (d, v) in plane[base..base + (x_hi - x_lo)].iter_mut().zip(s) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    // Bounds: the furthest element touched by each operand.
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above guarantee every strided access is in bounds,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Stride-1 convolution with "same" zero padding. `weight` is `[out, in, k, k]`.
pub fn conv2d_forward(x: &Tensor, weight: &[f32], bias: &[f32], g: &ConvGeom) -> Tensor {
    let s = x.shape();
    debug_assert_eq!(s.c, g.in_ch);
    let (h, w) = (s.h, s.w);
    let hw = h * w;
    let taps = g.taps();
    let mut out = Tensor::zeros(Shape4::new(s.n, g.out_ch, h, w));
    let rows = g.rows_per_tile(h, w);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; taps * rows * w]
    };
    for n in 0..s.n {
        let xs = x.sample(n);
        let ys = out.sample_mut(n);
        for (co, plane) in ys.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[co]);
        }
        if g.is_pointwise() {
            gemm(g.out_ch, taps, hw, weight, taps, 1, xs, hw, 1, 1.0, ys, hw, 1);
            continue;
        }
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + rows).min(h);
            let span = (r1 - r0) * w;
            im2col(xs, g, h, w, r0, r1, &mut cols[..taps * span]);
            gemm(
                g.out_ch,
                taps,
                span,
                weight,
                taps,
                1,
                &cols,
                span,
                1,
                1.0,
                &mut ys[r0 * w..],
                hw,
                1,
            );
            r0 = r1;
        }
    }
    out
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dweight: Option<Vec<f32>>,
    pub dbias: Option<Vec<f32>>,
}

pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f32],
    dy: &Tensor,
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> ConvGrads {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let hw = h * w;
    let taps = g.taps();
    let mut dx = need_dx.then(|| Tensor::zeros(s));
    let mut dweight = need_dw.then(|| vec![0.0f32; g.out_ch * taps]);
    let mut dbias = need_dw.then(|| vec![0.0f32; g.out_ch]);
    if !need_dx && !need_dw {
        return ConvGrads { dx, dweight, dbias };
    }
    let rows = g.rows_per_tile(h, w);
    let tile = if g.is_pointwise() { 0 } else { taps * rows * w };
    let mut cols = vec![0.0; tile];
    let mut dcols = vec![0.0; if need_dx { tile } else { 0 }];
    for n in 0..s.n {
        let xs = x.sample(n);
        let dys = dy.sample(n);
        if let Some(db) = dbias.as_mut() {
            for (co, plane) in dys.chunks_exact(hw).enumerate() {
                db[co] += plane.iter().sum::<f32>();
            }
        }
        if g.is_pointwise() {
            if let Some(dw) = dweight.as_mut() {
                gemm(g.out_ch, hw, taps, dys, hw, 1, xs, 1, hw, 1.0, dw, taps, 1);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = dx.sample_mut(n);
                gemm(taps, g.out_ch, hw, weight, 1, taps, dys, hw, 1, 0.0, dxs, hw, 1);
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + rows).min(h);
            let span = (r1 - r0) * w;
            let dy_tile = &dys[r0 * w..];
            if let Some(dw) = dweight.as_mut() {
                im2col(xs, g, h, w, r0, r1, &mut cols[..taps * span]);
                gemm(g.out_ch, span, taps, dy_tile, hw, 1, &cols, 1, span, 1.0, dw, taps, 1);
            }
            if let Some(dx) = dx.as_mut() {
                let dc = &mut dcols[..taps * span];
                gemm(taps, g.out_ch, span, weight, 1, taps, dy_tile, hw, 1, 0.0, dc, span, 1);
                col2im(dc, g, h, w, r0, r1, dx.sample_mut(n));
            }
            r0 = r1;
        }
    }
    ConvGrads { dx, dweight, dbias }
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Uses the forward output as the mask (`y > 0` iff `x > 0`).
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= p * (1.0 - p);
    }
    dx
}

/// 2x2 max pooling. `stride` is 2 (halving) or 1 ("same" output, padded
/// at the bottom/right edge). Returns the output and the flat in-plane
/// argmax of every output element.
pub fn maxpool_forward(x: &Tensor, stride: usize) -> (Tensor, Vec<u32>) {
    let s = x.shape();
    let (oh, ow) = if stride == 2 { (s.h / 2, s.w / 2) } else { (s.h, s.w) };
    let os = Shape4::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(os);
    let mut arg = vec![0u32; os.len()];
    let mut idx = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * stride, ox * stride);
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = y0 * s.w + x0;
                    for yy in y0..(y0 + 2).min(s.h) {
                        for xx in x0..(x0 + 2).min(s.w) {
                            let v = plane[yy * s.w + xx];
                            if v > best {
                                best = v;
                                best_i = yy * s.w + xx;
                            }
                        }
                    }
                    dst[oy * ow + ox] = best;
                    arg[idx] = best_i as u32;
                    idx += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(in_shape: Shape4, arg: &[u32], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    let op = dy.shape().plane();
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            let g = dy.plane(n, c);
            let a = &arg[(n * in_shape.c + c) * op..(n * in_shape.c + c + 1) * op];
            let dst = dx.plane_mut(n, c);
            for (gi, &ai) in g.iter().zip(a) {
                dst[ai as usize] += *gi;
            }
        }
    }
    dx
}

/// Source taps for one axis of a half-pixel 2x bilinear upsampling.
fn upsample_taps(len: usize) -> Vec<(usize, usize, f32, f32)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f32 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = src - i0 as f32;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

pub fn upsample2x_forward(x: &Tensor) -> Tensor {
    let s = x.shape();
    let ty = upsample_taps(s.h);
    let tx = upsample_taps(s.w);
    let os = Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
                let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
                let row = &mut dst[oy * os.w..(oy + 1) * os.w];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let top = wx0 * r0[x0] + wx1 * r0[x1];
                    let bot = wx0 * r1[x0] + wx1 * r1[x1];
                    row[ox] = wy0 * top + wy1 * bot;
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward(in_shape: Shape4, dy: &Tensor) -> Tensor {
    let ty = upsample_taps(in_shape.h);
    let tx = upsample_taps(in_shape.w);
    let ow = 2 * in_shape.w;
    let mut dx = Tensor::zeros(in_shape);
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            let g = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                let row = &g[oy * ow..(oy + 1) * ow];
                for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                    let v = row[ox];
                    dst[y0 * in_shape.w + x0] += wy0 * wx0 * v;
                    dst[y0 * in_shape.w + x1] += wy0 * wx1 * v;
                    dst[y1 * in_shape.w + x0] += wy1 * wx0 * v;
                    dst[y1 * in_shape.w + x1] += wy1 * wx1 * v;
                }
            }
        }
    }
    dx
}

/// Normalized activations and inverse standard deviations saved for backward.
pub struct NormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f32>,
}

/// Per-(sample, channel) normalization over the spatial plane.
pub fn instance_norm_forward(x: &Tensor, gamma: &[f32], beta: &[f32]) -> (Tensor, NormCache) {
    let s = x.shape();
    let m = s.plane() as f64;
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / m;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / m;
            let is = (1.0 / (var + NORM_EPS as f64).sqrt()) as f32;
            inv_std.push(is);
            let xh = xhat.plane_mut(n, c);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean as f32) * is;
            }
            let o = out.plane_mut(n, c);
            for (d, &v) in o.iter_mut().zip(xhat.plane(n, c)) {
                *d = gamma[c] * v + beta[c];
            }
        }
    }
    (out, NormCache { xhat, inv_std })
}

pub struct NormGrads {
    pub dx: Tensor,
    pub dgamma: Vec<f32>,
    pub dbeta: Vec<f32>,
}

fn norm_group_backward(dxhat: &[f32], xhat: &[f32], inv_std: f32, dx: &mut [f32]) {
    let m = dxhat.len() as f64;
    let sum_d = dxhat.iter().map(|&v| v as f64).sum::<f64>();
    let sum_dx = dxhat
        .iter()
        .zip(xhat)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum::<f64>();
    for ((d, &g), &xh) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *d = ((inv_std as f64 / m) * (m * g as f64 - sum_d - xh as f64 * sum_dx)) as f32;
    }
}

pub fn instance_norm_backward(cache: &NormCache, gamma: &[f32], dy: &Tensor) -> NormGrads {
    let s = dy.shape();
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    let mut dxhat = vec![0.0f32; s.plane()];
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            let mut dg = 0.0f64;
            let mut db = 0.0f64;
            for ((d, &gv), &xv) in dxhat.iter_mut().zip(g).zip(xh) {
                dg += gv as f64 * xv as f64;
                db += gv as f64;
                *d = gv * gamma[c];
            }
            dgamma[c] += dg as f32;
            dbeta[c] += db as f32;
            norm_group_backward(&dxhat, xh, cache.inv_std[n * s.c + c], dx.plane_mut(n, c));
        }
    }
    NormGrads { dx, dgamma, dbeta }
}

/// Batch normalization with batch statistics; updates the running
/// estimates in place.
pub fn batch_norm_forward_train(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
) -> (Tensor, NormCache) {
    let s = x.shape();
    let m = (s.n * s.plane()) as f64;
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            sum += x.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = sum / m;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            sq += x
                .plane(n, c)
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>();
        }
        let var = sq / m;
        let is = (1.0 / (var + NORM_EPS as f64).sqrt()) as f32;
        inv_std.push(is);
        running_mean[c] = BN_MOMENTUM * running_mean[c] + (1.0 - BN_MOMENTUM) * mean as f32;
        running_var[c] = BN_MOMENTUM * running_var[c] + (1.0 - BN_MOMENTUM) * var as f32;
        for n in 0..s.n {
            let src = x.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean as f32) * is;
            }
            let o = out.plane_mut(n, c);
            for (d, &v) in o.iter_mut().zip(xhat.plane(n, c)) {
                *d = gamma[c] * v + beta[c];
            }
        }
    }
    (out, NormCache { xhat, inv_std })
}

pub fn batch_norm_forward_infer(
    x: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let is = 1.0 / (running_var[c] + NORM_EPS).sqrt();
            let scale = gamma[c] * is;
            let shift = beta[c] - running_mean[c] * scale;
            for (d, &v) in out.plane_mut(n, c).iter_mut().zip(x.plane(n, c)) {
                *d = v * scale + shift;
            }
        }
    }
    out
}

pub fn batch_norm_backward(cache: &NormCache, gamma: &[f32], dy: &Tensor) -> NormGrads {
    let s = dy.shape();
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![0.0f32; s.c];
    let mut dbeta = vec![0.0f32; s.c];
    let p = s.plane();
    let mut dxhat = vec![0.0f32; s.n * p];
    let mut xh = vec![0.0f32; s.n * p];
    let mut dxg = vec![0.0f32; s.n * p];
    for c in 0..s.c {
        let mut dg = 0.0f64;
        let mut db = 0.0f64;
        for n in 0..s.n {
            let g = dy.plane(n, c);
            let xv = cache.xhat.plane(n, c);
            for i in 0..p {
                dg += g[i] as f64 * xv[i] as f64;
                db += g[i] as f64;
                dxhat[n * p + i] = g[i] * gamma[c];
                xh[n * p + i] = xv[i];
            }
        }
        dgamma[c] = dg as f32;
        dbeta[c] = db as f32;
        norm_group_backward(&dxhat, &xh, cache.inv_std[c], &mut dxg);
        for n in 0..s.n {
            dx.plane_mut(n, c).copy_from_slice(&dxg[n * p..(n + 1) * p]);
        }
    }
    NormGrads { dx, dgamma, dbeta }
}

/// Inverted-dropout mask: `0` for dropped units, `1/(1-rate)` otherwise.
/// `per_channel` drops whole feature maps (spatial dropout).
pub fn dropout_mask(shape: Shape4, rate: f32, per_channel: bool, rng: &mut impl Rng) -> Vec<f32> {
    let keep = 1.0 / (1.0 - rate);
    let mut mask = vec![0.0f32; shape.len()];
    if per_channel {
        for chunk in mask.chunks_exact_mut(shape.plane()) {
            let v = if rng.gen::<f32>() < rate { 0.0 } else { keep };
            chunk.fill(v);
        }
    } else {
        for m in mask.iter_mut() {
            *m = if rng.gen::<f32>() < rate { 0.0 } else { keep };
        }
    }
    mask
}

pub fn apply_mask(x: &Tensor, mask: &[f32]) -> Tensor {
    let mut out = x.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    out
}

pub fn concat_forward(parts: &[&Tensor]) -> Tensor {
    let s0 = parts[0].shape();
    let c: usize = parts.iter().map(|t| t.shape().c).sum();
    let mut out = Tensor::zeros(Shape4::new(s0.n, c, s0.h, s0.w));
    for n in 0..s0.n {
        let dst = out.sample_mut(n);
        let mut off = 0;
        for p in parts {
            let src = p.sample(n);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    out
}

pub fn concat_backward(dy: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let s = dy.shape();
    let mut outs: Vec<Tensor> = channels
        .iter()
        .map(|&c| Tensor::zeros(Shape4::new(s.n, c, s.h, s.w)))
        .collect();
    for n in 0..s.n {
        let src = dy.sample(n);
        let mut off = 0;
        for t in outs.iter_mut() {
            let d = t.sample_mut(n);
            let len = d.len();
            d.copy_from_slice(&src[off..off + len]);
            off += len;
        }
    }
    outs
}

pub fn gap_forward(x: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(Shape4::new(s.n, s.c, 1, 1));
    let m = s.plane() as f64;
    for n in 0..s.n {
        for c in 0..s.c {
            let v = x.plane(n, c).iter().map(|&v| v as f64).sum::<f64>() / m;
            out.plane_mut(n, c)[0] = v as f32;
        }
    }
    out
}

pub fn gap_backward(in_shape: Shape4, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    let inv = 1.0 / in_shape.plane() as f32;
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            let g = dy.plane(n, c)[0] * inv;
            dx.plane_mut(n, c).fill(g);
        }
    }
    dx
}

/// `x * scale` where `scale` is `[n, c, 1, 1]` broadcast over the plane.
pub fn channel_scale_forward(x: &Tensor, scale: &Tensor) -> Tensor {
    let s = x.shape();
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let k = scale.plane(n, c)[0];
            out.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
        }
    }
    out
}

pub fn channel_scale_backward(x: &Tensor, scale: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let s = x.shape();
    let mut dx = dy.clone();
    let mut ds = Tensor::zeros(scale.shape());
    for n in 0..s.n {
        for c in 0..s.c {
            let k = scale.plane(n, c)[0];
            let g = dy.plane(n, c);
            let acc = g
                .iter()
                .zip(x.plane(n, c))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>();
            ds.plane_mut(n, c)[0] = acc as f32;
            dx.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
        }
    }
    (dx, ds)
}

/// `a + b`, where `b` is either the same shape or `[n, c, 1, 1]`.
pub fn add_forward(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    if a.shape() == b.shape() {
        out.add_assign(b);
        return out;
    }
    let s = a.shape();
    for n in 0..s.n {
        for c in 0..s.c {
            let k = b.plane(n, c)[0];
            out.plane_mut(n, c).iter_mut().for_each(|v| *v += k);
        }
    }
    out
}

/// Gradient for the second operand of [`add_forward`].
pub fn add_backward_rhs(b_shape: Shape4, dy: &Tensor) -> Tensor {
    if b_shape == dy.shape() {
        return dy.clone();
    }
    let mut db = Tensor::zeros(b_shape);
    for n in 0..b_shape.n {
        for c in 0..b_shape.c {
            let acc = dy.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
            db.plane_mut(n, c)[0] = acc as f32;
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape4, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct nested-loop convolution used as a reference.
    fn naive_conv(x: &Tensor, w: &[f32], b: &[f32], g: &ConvGeom) -> Tensor {
        let s = x.shape();
        let mut out = Tensor::zeros(Shape4::new(s.n, g.out_ch, s.h, s.w));
        let half = (g.kernel / 2) as isize;
        for n in 0..s.n {
            for co in 0..g.out_ch {
                for oy in 0..s.h {
                    for ox in 0..s.w {
                        let mut acc = b[co] as f64;
                        for ci in 0..g.in_ch {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = oy as isize + (ky as isize - half) * g.dilation as isize;
                                    let ix = ox as isize + (kx as isize - half) * g.dilation as isize;
                                    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                        continue;
                                    }
                                    let wi = ((co * g.in_ch + ci) * g.kernel + ky) * g.kernel + kx;
                                    acc += w[wi] as f64
                                        * x.plane(n, ci)[iy as usize * s.w + ix as usize] as f64;
                                }
                            }
                        }
                        out.plane_mut(n, co)[oy * s.w + ox] = acc as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_for_dilations() {
        for (k, d) in [(3, 1), (3, 2), (3, 4), (1, 1), (3, 16)] {
            let g = ConvGeom { in_ch: 3, out_ch: 5, kernel: k, dilation: d };
            let x = random(Shape4::new(2, 3, 9, 7), 1);
            let w = random(Shape4::new(5, 3, k, k), 2).into_vec();
            let b = vec![0.1, -0.2, 0.3, 0.0, 0.5];
            let fast = conv2d_forward(&x, &w, &b, &g);
            let slow = naive_conv(&x, &w, &b, &g);
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-4, "k={k} d={d}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), dy> = <x, conv^T(dy)> and the weight gradient matches
        // the same bilinear form.
        let g = ConvGeom { in_ch: 2, out_ch: 3, kernel: 3, dilation: 2 };
        let x = random(Shape4::new(2, 2, 6, 5), 3);
        let w = random(Shape4::new(3, 2, 3, 3), 4).into_vec();
        let zero_b = vec![0.0; 3];
        let dy = random(Shape4::new(2, 3, 6, 5), 5);
        let y = conv2d_forward(&x, &w, &zero_b, &g);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| (a * b) as f64).sum();
        let grads = conv2d_backward(&x, &w, &dy, &g, true, true);
        let dx = grads.dx.unwrap();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3);
        let dw = grads.dweight.unwrap();
        let rhs_w: f64 = w.iter().zip(&dw).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs_w).abs() < 1e-3);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let x = random(Shape4::new(1, 2, 3, 4), 6);
        let dy = random(Shape4::new(1, 2, 6, 8), 7);
        let y = upsample2x_forward(&x);
        let lhs: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| (a * b) as f64).sum();
        let dx = upsample2x_backward(x.shape(), &dy);
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn upsample_preserves_constants() {
        let x = Tensor::filled(Shape4::new(1, 1, 4, 4), 0.7);
        let y = upsample2x_forward(&x);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn maxpool_same_keeps_size() {
        let x = random(Shape4::new(1, 1, 4, 4), 8);
        let (y, _) = maxpool_forward(&x, 1);
        assert_eq!(y.shape(), x.shape());
        let (y2, _) = maxpool_forward(&x, 2);
        assert_eq!(y2.shape(), Shape4::new(1, 1, 2, 2));
    }

    #[test]
    fn spatial_dropout_drops_whole_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = dropout_mask(Shape4::new(2, 8, 3, 3), 0.5, true, &mut rng);
        for plane in mask.chunks_exact(9) {
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }
}
