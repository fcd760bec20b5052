//! Multi-channel feature alignment objective.
//!
//! ```text
//! L = L_CE + λ1 (L_CAM + L_minor^ori + L_minor^aug) − λ2 L_style
//! ```
//!
//! `L_CAM` is the Jensen-Shannon divergence between the spatially
//! softmax-normalized CAMs of the original and augmented views. Each
//! `L_minor` is the mean absolute difference between the min-max normalized
//! CAAM and CAM of one view, and `L_style = |L_minor^ori − L_minor^aug|` is
//! rewarded rather than penalized.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::model::{ActivationBundle, BundleGrads};
use crate::ops;
use crate::tensor::Tensor;

/// Ranges below this are treated as constant maps by [`minmax_normalize`].
pub const MINMAX_EPS: f64 = 1e-12;

/// Upper bound applied to `L_style` before it enters the total.
pub const STYLE_CAP: f64 = 1.0;

/// Which alignment terms participate; disabled terms are neither computed nor reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossTerms {
    pub cam: bool,
    pub minor: bool,
    pub style: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::ALL
    }
}

impl LossTerms {
    pub const ALL: Self = Self {
        cam: true,
        minor: true,
        style: true,
    };
    pub const CE_ONLY: Self = Self {
        cam: false,
        minor: false,
        style: false,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub terms: LossTerms,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.001,
            terms: LossTerms::ALL,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            terms: LossTerms::ALL,
        }
    }

    pub fn ce_only() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            terms: LossTerms::CE_ONLY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda1) || !ok(self.lambda2) {
            return Err(Error::InvalidConfig(alloc::format!(
                "loss weights must be finite and non-negative, got λ1={} λ2={}",
                self.lambda1,
                self.lambda2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub cam: f64,
    pub minor_ori: f64,
    pub minor_aug: f64,
    pub style: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted total from the five components.
    pub fn combine(ce: f64, cam: f64, minor_ori: f64, minor_aug: f64, style: f64, w: &LossWeights) -> Self {
        Self {
            ce,
            cam,
            minor_ori,
            minor_aug,
            style,
            total: ce + w.lambda1 * (cam + minor_ori + minor_aug) - w.lambda2 * style,
        }
    }

    /// Component-wise mean; empty input gives all zeros.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let mut m = Self::default();
        for b in items {
            m.ce += b.ce;
            m.cam += b.cam;
            m.minor_ori += b.minor_ori;
            m.minor_aug += b.minor_aug;
            m.style += b.style;
            m.total += b.total;
        }
        m.ce /= n;
        m.cam /= n;
        m.minor_ori /= n;
        m.minor_aug /= n;
        m.style /= n;
        m.total /= n;
        m
    }
}

/// Softmax over every cell of a map.
pub fn spatial_normalize(map: &Tensor) -> Tensor {
    Tensor::new(map.shape(), ops::softmax(map.data())).expect("same length")
}

/// Backward of [`spatial_normalize`] given its output `p`.
pub fn spatial_normalize_backward(p: &Tensor, grad_p: &Tensor) -> Result<Tensor> {
    grad_p.expect_shape("spatial_normalize_backward", p.shape())?;
    let dot: f64 = p.data().iter().zip(grad_p.data()).map(|(a, b)| a * b).sum();
    let data = p
        .data()
        .iter()
        .zip(grad_p.data())
        .map(|(pi, gi)| pi * (gi - dot))
        .collect();
    Tensor::new(p.shape(), data)
}

fn check_distribution(p: &[f64], which: &'static str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::NotADistribution(which));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::NotADistribution(which));
    }
    Ok(())
}

fn kl_term(a: f64, m: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * libm::log(a / m)
    }
}

/// `½ KL(p‖m) + ½ KL(q‖m)` with `m = (p + q) / 2`, natural log.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(shape_err("js_divergence", &[p.len()], &[q.len()]));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        acc += kl_term(a, m) + kl_term(b, m);
    }
    // Rounding can leave a -1e-17 residue for p == q.
    Ok((0.5 * acc).max(0.0))
}

/// `∂JS/∂p_i = ½ ln(p_i / m_i)` and symmetrically for `q`. Zero entries
/// get a zero gradient (the one-sided derivative is unbounded there).
pub fn js_divergence_grad(p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != q.len() {
        return Err(shape_err("js_divergence_grad", &[p.len()], &[q.len()]));
    }
    let half_log_ratio = |a: f64, m: f64| if a > 0.0 { 0.5 * libm::log(a / m) } else { 0.0 };
    let mut gp = Vec::with_capacity(p.len());
    let mut gq = Vec::with_capacity(q.len());
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        gp.push(half_log_ratio(a, m));
        gq.push(half_log_ratio(b, m));
    }
    Ok((gp, gq))
}

/// `L_CAM`: JS divergence of the softmax-normalized maps.
pub fn loss_cam(cam_ori: &Tensor, cam_aug: &Tensor) -> Result<f64> {
    Ok(loss_cam_with_grad(cam_ori, cam_aug)?.0)
}

pub fn loss_cam_with_grad(cam_ori: &Tensor, cam_aug: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    cam_aug.expect_shape("loss_cam", cam_ori.shape())?;
    let p = spatial_normalize(cam_ori);
    let q = spatial_normalize(cam_aug);
    let value = js_divergence(p.data(), q.data())?;
    let (gp, gq) = js_divergence_grad(p.data(), q.data())?;
    let ga = spatial_normalize_backward(&p, &Tensor::new(p.shape(), gp)?)?;
    let gb = spatial_normalize_backward(&q, &Tensor::new(q.shape(), gq)?)?;
    Ok((value, ga, gb))
}

/// Rescales to `[0, 1]`; maps whose range is below [`MINMAX_EPS`] become all zeros.
pub fn minmax_normalize(map: &Tensor) -> Tensor {
    let (lo, hi) = min_max(map.data());
    let range = hi.1 - lo.1;
    if !(range > MINMAX_EPS) {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| (v - lo.1) / range)
}

/// Backward of [`minmax_normalize`]. The min and max are attributed to their
/// first occurrence.
pub fn minmax_normalize_backward(map: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("minmax_normalize_backward", map.shape())?;
    let (lo, hi) = min_max(map.data());
    let range = hi.1 - lo.1;
    if !(range > MINMAX_EPS) {
        return Ok(Tensor::zeros(map.shape()));
    }
    let g = grad_out.data();
    let mut out: Vec<f64> = g.iter().map(|gi| gi / range).collect();
    let mut d_lo = 0.0;
    let mut d_hi = 0.0;
    for (&x, &gi) in map.data().iter().zip(g) {
        let n = (x - lo.1) / range;
        d_lo += gi * (n - 1.0) / range;
        d_hi -= gi * n / range;
    }
    out[lo.0] += d_lo;
    out[hi.0] += d_hi;
    Tensor::new(map.shape(), out)
}

fn min_max(v: &[f64]) -> ((usize, f64), (usize, f64)) {
    let mut lo = (0, v[0]);
    let mut hi = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < lo.1 {
            lo = (i, x);
        }
        if x > hi.1 {
            hi = (i, x);
        }
    }
    (lo, hi)
}

/// `L_minor`: mean absolute difference of the min-max normalized CAAM and CAM.
pub fn loss_minor(caam: &Tensor, cam: &Tensor) -> Result<f64> {
    Ok(loss_minor_with_grad(caam, cam)?.0)
}

pub fn loss_minor_with_grad(caam: &Tensor, cam: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    cam.expect_shape("loss_minor", caam.shape())?;
    if caam.is_empty() {
        return Err(shape_err("loss_minor", &[1], &[0]));
    }
    let a = minmax_normalize(caam);
    let b = minmax_normalize(cam);
    let inv = 1.0 / a.len() as f64;
    let mut value = 0.0;
    let mut ga = Vec::with_capacity(a.len());
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        value += d.abs();
        ga.push(if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        });
    }
    let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
    let g_caam = minmax_normalize_backward(caam, &Tensor::new(caam.shape(), ga)?)?;
    let g_cam = minmax_normalize_backward(cam, &Tensor::new(cam.shape(), gb)?)?;
    Ok((value * inv, g_caam, g_cam))
}

/// `L_style = |L_minor^ori − L_minor^aug|`.
pub fn loss_style(minor_ori: f64, minor_aug: f64) -> f64 {
    (minor_ori - minor_aug).abs()
}

/// Per-view upstream gradients produced by [`total_loss`].
#[derive(Debug, Clone)]
pub struct PairGrads {
    pub ori: BundleGrads,
    pub aug: BundleGrads,
}

/// The full objective for one original/augmented pair, with gradients
/// w.r.t. each bundle's logits, CAM and CAAM. Cross-entropy is the mean of
/// the two views' cross-entropies against `label`.
pub fn total_loss(
    ori: &ActivationBundle,
    aug: &ActivationBundle,
    label: usize,
    weights: &LossWeights,
) -> Result<(LossBreakdown, PairGrads)> {
    aug.cam.expect_shape("total_loss", ori.cam.shape())?;
    if ori.label != label || aug.label != label {
        return Err(Error::InvalidConfig(alloc::format!(
            "bundles carry CAMs for classes {} / {}, expected {label}",
            ori.label,
            aug.label
        )));
    }
    let (ce_o, mut g_logit_o) = ops::softmax_cross_entropy(&ori.logits, label)?;
    let (ce_a, mut g_logit_a) = ops::softmax_cross_entropy(&aug.logits, label)?;
    for g in g_logit_o.data_mut().iter_mut().chain(g_logit_a.data_mut()) {
        *g *= 0.5;
    }
    let ce = 0.5 * (ce_o + ce_a);

    let shape = ori.cam.shape();
    let mut g_cam_o = Tensor::zeros(shape);
    let mut g_cam_a = Tensor::zeros(shape);
    let mut g_caam_o = Tensor::zeros(shape);
    let mut g_caam_a = Tensor::zeros(shape);
    let l1 = weights.lambda1;
    let terms = weights.terms;

    let mut cam = 0.0;
    if terms.cam {
        let (v, ga, gb) = loss_cam_with_grad(&ori.cam, &aug.cam)?;
        cam = v;
        axpy(&mut g_cam_o, l1, &ga);
        axpy(&mut g_cam_a, l1, &gb);
    }

    let (mut minor_ori, mut minor_aug, mut style) = (0.0, 0.0, 0.0);
    if terms.minor || terms.style {
        let (mo, gcaam_o, gcam_o) = loss_minor_with_grad(&ori.caam, &ori.cam)?;
        let (ma, gcaam_a, gcam_a) = loss_minor_with_grad(&aug.caam, &aug.cam)?;
        if terms.minor {
            minor_ori = mo;
            minor_aug = ma;
            axpy(&mut g_caam_o, l1, &gcaam_o);
            axpy(&mut g_cam_o, l1, &gcam_o);
            axpy(&mut g_caam_a, l1, &gcaam_a);
            axpy(&mut g_cam_a, l1, &gcam_a);
        }
        if terms.style {
            let raw = loss_style(mo, ma);
            style = raw.min(STYLE_CAP);
            if raw < STYLE_CAP {
                // d(-λ2 |mo - ma|) = -λ2 sign(mo - ma) (dmo - dma)
                let s = if mo > ma {
                    1.0
                } else if mo < ma {
                    -1.0
                } else {
                    0.0
                };
                let c = -weights.lambda2 * s;
                axpy(&mut g_caam_o, c, &gcaam_o);
                axpy(&mut g_cam_o, c, &gcam_o);
                axpy(&mut g_caam_a, -c, &gcaam_a);
                axpy(&mut g_cam_a, -c, &gcam_a);
            }
        }
    }

    let breakdown = LossBreakdown::combine(ce, cam, minor_ori, minor_aug, style, weights);
    let wants_maps = terms.cam || terms.minor || terms.style;
    let pack = |logits: Tensor, cam: Tensor, caam: Tensor| BundleGrads {
        logits,
        cam: wants_maps.then_some(cam),
        caam: wants_maps.then_some(caam),
    };
    Ok((
        breakdown,
        PairGrads {
            ori: pack(g_logit_o, g_cam_o, g_caam_o),
            aug: pack(g_logit_a, g_cam_a, g_caam_a),
        },
    ))
}

fn axpy(dst: &mut Tensor, alpha: f64, src: &Tensor) {
    if alpha == 0.0 {
        return;
    }
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += alpha * s;
    }
}
