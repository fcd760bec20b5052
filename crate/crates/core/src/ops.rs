//! Differentiable primitives with hand-written backward passes.
//!
//! Every `*_backward` takes the forward inputs plus the upstream gradient of
//! a scalar objective with respect to the forward output, and returns the
//! gradient with respect to each forward input.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Side length of the only supported convolution kernel.
pub const KERNEL: usize = 3;

fn conv_dims(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(shape_err("conv2d", &[0, 0, 0], s));
    }
    let (c_in, h, w) = (s[0], s[1], s[2]);
    let k = kernel.shape();
    if k.len() != 4 || k[1] != c_in || k[2] != KERNEL || k[3] != KERNEL {
        return Err(shape_err(
            "conv2d kernel",
            &[k.first().copied().unwrap_or(0), c_in, KERNEL, KERNEL],
            k,
        ));
    }
    let c_out = k[0];
    bias.expect_shape("conv2d bias", &[c_out])?;
    Ok((c_in, c_out, h, w))
}

/// Index range of output positions whose shifted source `pos + delta` stays in `0..len`.
#[inline]
fn valid_range(len: usize, delta: isize) -> (usize, usize) {
    let lo = if delta < 0 { (-delta) as usize } else { 0 };
    let hi = if delta > 0 { len.saturating_sub(delta as usize) } else { len };
    (lo, hi.max(lo))
}

/// Unrolls `[C, H, W]` into `[C·9, H·W]` patches (zero padded), row
/// `c·9 + ky·3 + kx` holding `input[c, y + ky − 1, x + kx − 1]`.
fn im2col(x: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut col = vec![0.0; c_in * 9 * plane];
    for ci in 0..c_in {
        let ip = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL {
            let dy = ky as isize - 1;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..KERNEL {
                let dx = kx as isize - 1;
                let (x0, x1) = valid_range(w, dx);
                let row = &mut col[(ci * 9 + ky * KERNEL + kx) * plane..][..plane];
                let sx0 = (x0 as isize + dx) as usize;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&ip[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(col: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut gx = vec![0.0; c_in * plane];
    for ci in 0..c_in {
        let gp = &mut gx[ci * plane..(ci + 1) * plane];
        for ky in 0..KERNEL {
            let dy = ky as isize - 1;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..KERNEL {
                let dx = kx as isize - 1;
                let (x0, x1) = valid_range(w, dx);
                let row = &col[(ci * 9 + ky * KERNEL + kx) * plane..][..plane];
                let sx0 = (x0 as isize + dx) as usize;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let dst = &mut gp[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (d, s) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
    gx
}

/// `out[M×P] += a[M×K] · b[K×P]`, four output rows per pass over `b`.
fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, p: usize) {
    let mut rows = out.chunks_exact_mut(p);
    let mut i = 0;
    while i + 4 <= m {
        let o0 = rows.next().expect("row");
        let o1 = rows.next().expect("row");
        let o2 = rows.next().expect("row");
        let o3 = rows.next().expect("row");
        for (r, br) in b.chunks_exact(p).enumerate().take(k) {
            let w0 = a[i * k + r];
            let w1 = a[(i + 1) * k + r];
            let w2 = a[(i + 2) * k + r];
            let w3 = a[(i + 3) * k + r];
            for ((((v, x0), x1), x2), x3) in br
                .iter()
                .zip(o0.iter_mut())
                .zip(o1.iter_mut())
                .zip(o2.iter_mut())
                .zip(o3.iter_mut())
            {
                *x0 += w0 * v;
                *x1 += w1 * v;
                *x2 += w2 * v;
                *x3 += w3 * v;
            }
        }
        i += 4;
    }
    for (row, o) in (i..m).zip(rows) {
        for (r, br) in b.chunks_exact(p).enumerate().take(k) {
            let w = a[row * k + r];
            for (x, v) in o.iter_mut().zip(br) {
                *x += w * v;
            }
        }
    }
}

/// `out[M×K] = a[M×P] · b[K×P]ᵀ`. Each dot product accumulates in four
/// interleaved lanes combined in a fixed order.
fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    let lanes = p / 4 * 4;
    let finish = |acc: [f64; 4], ar: &[f64], br: &[f64]| {
        let tail: f64 = ar[lanes..].iter().zip(&br[lanes..]).map(|(x, y)| x * y).sum();
        (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
    };
    let mut i = 0;
    while i + 4 <= m {
        let a0 = &a[i * p..(i + 1) * p];
        let a1 = &a[(i + 1) * p..(i + 2) * p];
        let a2 = &a[(i + 2) * p..(i + 3) * p];
        let a3 = &a[(i + 3) * p..(i + 4) * p];
        for (r, br) in b.chunks_exact(p).enumerate().take(k) {
            let mut acc = [[0.0f64; 4]; 4];
            for x in (0..lanes).step_by(4) {
                let bv = &br[x..x + 4];
                for (j, ar) in [a0, a1, a2, a3].iter().enumerate() {
                    let av = &ar[x..x + 4];
                    for l in 0..4 {
                        acc[j][l] += av[l] * bv[l];
                    }
                }
            }
            for (j, ar) in [a0, a1, a2, a3].iter().enumerate() {
                out[(i + j) * k + r] = finish(acc[j], ar, br);
            }
        }
        i += 4;
    }
    for row in i..m {
        let ar = &a[row * p..(row + 1) * p];
        for (r, br) in b.chunks_exact(p).enumerate().take(k) {
            let mut acc = [0.0f64; 4];
            for x in (0..lanes).step_by(4) {
                for l in 0..4 {
                    acc[l] += ar[x + l] * br[x + l];
                }
            }
            out[row * k + r] = finish(acc, ar, br);
        }
    }
    out
}

/// 3×3 cross-correlation with stride 1 and zero padding 1.
///
/// `input` is `[C_in, H, W]`, `kernel` is `[C_out, C_in, 3, 3]`, `bias` is
/// `[C_out]`; the result is `[C_out, H, W]`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, c_out, h, w) = conv_dims(input, kernel, bias)?;
    let plane = h * w;
    let col = im2col(input.data(), c_in, h, w);
    let mut out = vec![0.0; c_out * plane];
    for (co, op) in out.chunks_exact_mut(plane).enumerate() {
        op.fill(bias.data()[co]);
    }
    gemm_acc(&mut out, kernel.data(), &col, c_out, c_in * 9, plane);
    Tensor::new(&[c_out, h, w], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (gx, gk, gb) = conv2d_backward_impl(input, kernel, bias, grad_out, true)?;
    Ok(ConvGrads {
        input: gx.expect("requested"),
        kernel: gk,
        bias: gb,
    })
}

/// Kernel and bias gradients only, for a layer whose input needs none.
pub fn conv2d_backward_params(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (_, gk, gb) = conv2d_backward_impl(input, kernel, bias, grad_out, false)?;
    Ok((gk, gb))
}

fn conv2d_backward_impl(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (c_in, c_out, h, w) = conv_dims(input, kernel, bias)?;
    grad_out.expect_shape("conv2d_backward", &[c_out, h, w])?;
    let plane = h * w;
    let taps = c_in * 9;
    let col = im2col(input.data(), c_in, h, w);
    let g = grad_out.data();
    let gb: Vec<f64> = g.chunks_exact(plane).map(|gp| gp.iter().sum()).collect();
    let gk = gemm_nt(g, &col, c_out, taps, plane);
    let gx = if want_input {
        let k = kernel.data();
        let mut kt = vec![0.0; taps * c_out];
        for co in 0..c_out {
            for r in 0..taps {
                kt[r * c_out + co] = k[co * taps + r];
            }
        }
        let mut gcol = vec![0.0; taps * plane];
        gemm_acc(&mut gcol, &kt, g, taps, c_out, plane);
        Some(Tensor::new(input.shape(), col2im(&gcol, c_in, h, w))?)
    } else {
        None
    };
    Ok((gx, Tensor::new(kernel.shape(), gk)?, Tensor::new(&[c_out], gb)?))
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of ReLU; the derivative at exactly zero is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu_backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

fn map_dims(op: &'static str, maps: &Tensor) -> Result<(usize, usize, usize)> {
    let s = maps.shape();
    if s.len() != 3 || s[1] == 0 || s[2] == 0 {
        return Err(shape_err(op, &[0, 1, 1], s));
    }
    Ok((s[0], s[1], s[2]))
}

/// 2×2 average pooling with stride 2 on `[C, H, W]` (H and W even).
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = map_dims("avg_pool2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err("avg_pool2", &[c, h - h % 2, w - w % 2], input.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let ip = &x[ch * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let a = ip[2 * y * w + 2 * xx];
                let b = ip[2 * y * w + 2 * xx + 1];
                let cc = ip[(2 * y + 1) * w + 2 * xx];
                let d = ip[(2 * y + 1) * w + 2 * xx + 1];
                out[ch * oh * ow + y * ow + xx] = 0.25 * (a + b + cc + d);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

pub fn avg_pool2_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    grad_out.expect_shape("avg_pool2_backward", &[c, oh, ow])?;
    let g = grad_out.data();
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gx[ch * h * w + y * w + x] = 0.25 * g[ch * oh * ow + (y / 2) * ow + x / 2];
            }
        }
    }
    Tensor::new(input_shape, gx)
}

/// Spatial mean of each channel: `[K, H, W] -> [K]`.
pub fn global_avg_pool(maps: &Tensor) -> Result<Tensor> {
    let (k, h, w) = map_dims("global_avg_pool", maps)?;
    let inv = 1.0 / (h * w) as f64;
    let out = (0..k).map(|c| maps.channel(c).iter().sum::<f64>() * inv).collect();
    Tensor::new(&[k], out)
}

/// Spreads `grad_out[k] / (H·W)` over every cell of channel `k`.
pub fn global_avg_pool_backward(maps_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (k, h, w) = (maps_shape[0], maps_shape[1], maps_shape[2]);
    grad_out.expect_shape("global_avg_pool_backward", &[k])?;
    let inv = 1.0 / (h * w) as f64;
    let mut gx = Vec::with_capacity(k * h * w);
    for &g in grad_out.data() {
        gx.extend(core::iter::repeat_n(g * inv, h * w));
    }
    Tensor::new(maps_shape, gx)
}

fn linear_dims(features: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let k = features.len();
    features.expect_shape("linear features", &[k])?;
    let ws = weights.shape();
    if ws.len() != 2 || ws[1] != k {
        return Err(shape_err("linear weights", &[ws.first().copied().unwrap_or(0), k], ws));
    }
    bias.expect_shape("linear bias", &[ws[0]])?;
    Ok((ws[0], k))
}

/// `z_i = Σ_k weights[i, k] · features[k] + bias[i]`.
pub fn linear(features: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (classes, k) = linear_dims(features, weights, bias)?;
    let f = features.data();
    let out = (0..classes)
        .map(|i| {
            let row = &weights.data()[i * k..(i + 1) * k];
            row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + bias.data()[i]
        })
        .collect();
    Tensor::new(&[classes], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub features: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(
    features: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<LinearGrads> {
    let (classes, k) = linear_dims(features, weights, bias)?;
    grad_out.expect_shape("linear_backward", &[classes])?;
    let f = features.data();
    let g = grad_out.data();
    let mut gw = vec![0.0; classes * k];
    let mut gf = vec![0.0; k];
    for i in 0..classes {
        let row = &weights.data()[i * k..(i + 1) * k];
        for j in 0..k {
            gw[i * k + j] = g[i] * f[j];
            gf[j] += row[j] * g[i];
        }
    }
    Ok(LinearGrads {
        features: Tensor::new(&[k], gf)?,
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[classes], g.to_vec())?,
    })
}

/// Max-shifted softmax over a flat slice.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot(label)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if label >= n {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: n,
        });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>());
    let loss = lse - z[label];
    let mut grad = softmax(z);
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape(), grad)?))
}

/// Returns `params - rate * grads` without touching either input.
pub fn sgd_step(params: &ParamSet, grads: &ParamSet, rate: f64) -> Result<ParamSet> {
    let mut out = params.clone();
    out.axpy(-rate, grads)?;
    Ok(out)
}
