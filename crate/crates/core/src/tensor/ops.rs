//! Forward kernels and their adjoints.
//!
//! Every function here is pure. The gradient tape calls the `*_backward`
//! helpers; the rest of the crate calls the forward kernels directly when no
//! gradient is needed.

use super::Tensor;
use crate::error::{Error, Result};

/// Layer-norm epsilon added to the variance.
pub const LAYERNORM_EPS: f64 = 1e-6;

fn expect_rank(t: &Tensor, rank: usize, op: &'static str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::Usage(format!(
            "{op} expects rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// `out[m×n] += a[m×k] · b[k×n]` on raw row-major slices; returns the
/// multiply-add count.
pub fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) -> u64 {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    (m * k * n) as u64
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`; returns the multiply-add count.
pub fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) -> u64 {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    (m * k * n) as u64
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` for matrices with equal column counts.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let mut out = vec![0.0; m * n];
    gemm_nt(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    expect_rank(a, 2, "transpose")?;
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Gradients of `a·b` given the upstream gradient.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut ga = vec![0.0; m * k];
    gemm_nt(grad.data(), b.data(), &mut ga, m, n, k);
    let at = transpose(a).expect("rank checked at forward");
    let mut gb = vec![0.0; k * n];
    gemm_acc(at.data(), grad.data(), &mut gb, k, m, n);
    (
        Tensor::from_parts(vec![m, k], ga),
        Tensor::from_parts(vec![k, n], gb),
    )
}

/// Convolution geometry derived from an input, a kernel, stride and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvShape {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 || input[2] != kernel[2] {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let (h, w, cin) = (input[0], input[1], input[2]);
        let (kh, kw, cout) = (kernel[0], kernel[1], kernel[3]);
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "conv2d kernel must have odd extents, got {kh}×{kw}"
            )));
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh
            || span_w < kw
            || !(span_h - kh).is_multiple_of(stride)
            || !(span_w - kw).is_multiple_of(stride)
        {
            return Err(Error::Config(format!(
                "conv2d output size is not integral for input {h}×{w}, kernel {kh}×{kw}, stride {stride}, padding {padding}"
            )));
        }
        Ok(Self {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            padding,
            out_h: (span_h - kh) / stride + 1,
            out_w: (span_w - kw) / stride + 1,
        })
    }

    pub fn macs(&self) -> u64 {
        (self.out_h * self.out_w * self.kh * self.kw * self.cin * self.cout) as u64
    }

    /// Input coordinate hit by output `(oy, ox)` under tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// Zero-padded cross-correlation of an `H×W×Cin` map with a
/// `kh×kw×Cin×Cout` kernel.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvShape::new(input.shape(), kernel.shape(), stride, padding)?;
    let (x, k) = (input.data(), kernel.data());
    let mut out = vec![0.0; g.out_h * g.out_w * g.cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let acc = &mut out[(oy * g.out_w + ox) * g.cout..][..g.cout];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some((iy, ix)) = g.source(oy, ox, ky, kx) else {
                        continue;
                    };
                    let src = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let taps = &k[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &v) in src.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        for (a, &wv) in acc.iter_mut().zip(&taps[ci * g.cout..(ci + 1) * g.cout]) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.out_h, g.out_w, g.cout], out))
}

/// Gradients of `conv2d` with respect to input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    grad: &Tensor,
) -> (Tensor, Tensor) {
    let g =
        ConvShape::new(input.shape(), kernel.shape(), stride, padding).expect("checked at forward");
    let (x, k, go) = (input.data(), kernel.data(), grad.data());
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let gout = &go[(oy * g.out_w + ox) * g.cout..][..g.cout];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some((iy, ix)) = g.source(oy, ox, ky, kx) else {
                        continue;
                    };
                    let base_in = (iy * g.w + ix) * g.cin;
                    let base_k = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let v = x[base_in + ci];
                        let taps = &k[base_k + ci * g.cout..][..g.cout];
                        let gtaps = &mut gk[base_k + ci * g.cout..][..g.cout];
                        let mut dot = 0.0;
                        for ((gt, &t), &gv) in gtaps.iter_mut().zip(taps).zip(gout) {
                            *gt += v * gv;
                            dot += t * gv;
                        }
                        gx[base_in + ci] += dot;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(kernel.shape().to_vec(), gk),
    )
}

/// One output sample of a separable linear interpolation: the two source
/// indices and their weights.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

/// Half-pixel-centred source coordinates: output `p` reads `(p + 0.5)/s - 0.5`,
/// clamped to the valid range.
fn axis_taps(in_len: usize, scale: usize) -> Vec<Tap> {
    (0..in_len * scale)
        .map(|p| {
            let src = ((p as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            let t = src - lo as f64;
            Tap {
                lo,
                hi,
                w_lo: 1.0 - t,
                w_hi: t,
            }
        })
        .collect()
}

/// Bilinear upsampling of an `h×w×c` map by an integer factor.
pub fn bilinear_upsample(f: &Tensor, scale: usize) -> Result<Tensor> {
    expect_rank(f, 3, "bilinear_upsample")?;
    if scale == 0 {
        return Err(Error::Config("upsampling scale must be at least 1".into()));
    }
    let (h, w, c) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let (ty, tx) = (axis_taps(h, scale), axis_taps(w, scale));
    let src = f.data();
    let (oh, ow) = (h * scale, w * scale);
    let mut out = vec![0.0; oh * ow * c];
    for (oy, ry) in ty.iter().enumerate() {
        for (ox, rx) in tx.iter().enumerate() {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for (yy, wy) in [(ry.lo, ry.w_lo), (ry.hi, ry.w_hi)] {
                for (xx, wx) in [(rx.lo, rx.w_lo), (rx.hi, rx.w_hi)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let s = &src[(yy * w + xx) * c..][..c];
                    for (d, &v) in dst.iter_mut().zip(s) {
                        *d += wgt * v;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}

/// Adjoint of `bilinear_upsample`.
pub fn bilinear_upsample_backward(input_shape: &[usize], scale: usize, grad: &Tensor) -> Tensor {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let (ty, tx) = (axis_taps(h, scale), axis_taps(w, scale));
    let ow = w * scale;
    let g = grad.data();
    let mut out = vec![0.0; h * w * c];
    for (oy, ry) in ty.iter().enumerate() {
        for (ox, rx) in tx.iter().enumerate() {
            let src = &g[(oy * ow + ox) * c..][..c];
            for (yy, wy) in [(ry.lo, ry.w_lo), (ry.hi, ry.w_hi)] {
                for (xx, wx) in [(rx.lo, rx.w_lo), (rx.hi, rx.w_hi)] {
                    let wgt = wy * wx;
                    if wgt == 0.0 {
                        continue;
                    }
                    let d = &mut out[(yy * w + xx) * c..][..c];
                    for (o, &v) in d.iter_mut().zip(src) {
                        *o += wgt * v;
                    }
                }
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), out)
}

/// Non-overlapping box average of an `H×W×C` map by `factor` in both axes.
pub fn avg_pool(f: &Tensor, factor: usize) -> Result<Tensor> {
    expect_rank(f, 3, "avg_pool")?;
    let (h, w, c) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Config(format!(
            "pooling factor {factor} does not divide {h}×{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let src = f.data();
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..h {
        for x in 0..w {
            let d = &mut out[((y / factor) * ow + x / factor) * c..][..c];
            for (o, &v) in d.iter_mut().zip(&src[(y * w + x) * c..][..c]) {
                *o += v * norm;
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}

/// Row-wise softmax of a matrix, stabilised by subtracting the row maximum.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "softmax_rows")?;
    let n = x.shape()[1];
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        softmax_in_place(row);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn softmax_rows_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let n = y.shape()[1];
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out
        .chunks_mut(n)
        .zip(y.data().chunks(n))
        .zip(grad.data().chunks(n))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

/// Per-row standardisation followed by an affine map over the last axis.
pub fn layernorm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "layernorm")?;
    let c = x.shape()[1];
    if c < 2 {
        return Err(Error::Config(
            "layernorm needs at least two channels".into(),
        ));
    }
    if gain.len() != c || bias.len() != c {
        return Err(Error::shape("layernorm", x.shape(), gain.shape()));
    }
    let mut out = vec![0.0; x.len()];
    for (o, row) in out.chunks_mut(c).zip(x.data().chunks(c)) {
        let (mean, inv_std) = row_moments(row);
        for (j, (ov, &v)) in o.iter_mut().zip(row).enumerate() {
            *ov = (v - mean) * inv_std * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYERNORM_EPS).sqrt())
}

/// Gradients of `layernorm` with respect to input, gain and bias.
pub fn layernorm_backward(x: &Tensor, gain: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let c = x.shape()[1];
    let n = c as f64;
    let mut gx = vec![0.0; x.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut dxhat = vec![0.0; c];
    for ((o, row), gr) in gx
        .chunks_mut(c)
        .zip(x.data().chunks(c))
        .zip(grad.data().chunks(c))
    {
        let (mean, inv_std) = row_moments(row);
        for j in 0..c {
            xhat[j] = (row[j] - mean) * inv_std;
            dxhat[j] = gr[j] * gain.data()[j];
            gg[j] += gr[j] * xhat[j];
            gb[j] += gr[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for j in 0..c {
            o[j] = inv_std * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(gain.shape().to_vec(), gg),
        Tensor::from_parts(gain.shape().to_vec(), gb),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Adds a bias vector along the last axis.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().expect("tensors have rank >= 1");
    if bias.len() != c {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Sums a tensor over every axis but the last.
pub fn sum_to_last(x: &Tensor) -> Tensor {
    let c = *x.shape().last().expect("tensors have rank >= 1");
    let mut out = vec![0.0; c];
    for row in x.data().chunks(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![c], out)
}

/// Concatenates two tensors along the last axis; all other axes must agree.
pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra != rb || a.shape()[..ra - 1] != b.shape()[..rb - 1] {
        return Err(Error::shape("concat", a.shape(), b.shape()));
    }
    let (ca, cb) = (a.shape()[ra - 1], b.shape()[rb - 1]);
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (x, y) in a.data().chunks(ca).zip(b.data().chunks(cb)) {
        out.extend_from_slice(x);
        out.extend_from_slice(y);
    }
    let mut shape = a.shape().to_vec();
    shape[ra - 1] = ca + cb;
    Ok(Tensor::from_parts(shape, out))
}

/// Splits the upstream gradient of `concat_last` back into its halves.
pub fn concat_last_backward(
    a_shape: &[usize],
    b_shape: &[usize],
    grad: &Tensor,
) -> (Tensor, Tensor) {
    let ca = *a_shape.last().unwrap();
    let cb = *b_shape.last().unwrap();
    let mut ga = Vec::with_capacity(grad.len());
    let mut gb = Vec::with_capacity(grad.len());
    for row in grad.data().chunks(ca + cb) {
        ga.extend_from_slice(&row[..ca]);
        gb.extend_from_slice(&row[ca..]);
    }
    (
        Tensor::from_parts(a_shape.to_vec(), ga),
        Tensor::from_parts(b_shape.to_vec(), gb),
    )
}
