//! Domain enhancement: mask-driven background substitution followed by
//! threshold-gated visual corruptions.
//!
//! Corruptions run in the order of [`CorruptionConfig::enabled`]. For each
//! kind a gate value `p ~ U[0, 1]` and a severity are drawn; the corruption
//! is applied only when `p > threshold`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

/// One image with its class and optional binary foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// Sample identity within its dataset; augmentation preserves it.
    pub id: u64,
    pixels: Tensor,
    pub label: usize,
    mask: Option<Tensor>,
}

impl LabeledImage {
    /// `pixels` is `[3, H, W]` and is clamped to `[0, 1]`; `mask` is `[H, W]`
    /// and must contain only 0 and 1.
    pub fn new(id: u64, pixels: Tensor, label: usize, mask: Option<Tensor>) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(shape_err("LabeledImage", &[3, 0, 0], s));
        }
        let pixels = pixels.map(|v| v.clamp(0.0, 1.0));
        if let Some(m) = &mask {
            m.expect_shape("LabeledImage mask", &s[1..])?;
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidConfig("mask values must be 0 or 1".into()));
            }
        }
        Ok(Self {
            id,
            pixels,
            label,
            mask,
        })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    fn with_pixels(&self, data: Vec<f64>) -> Self {
        let pixels = Tensor::new(self.pixels.shape(), data)
            .expect("same shape")
            .map(|v| v.clamp(0.0, 1.0));
        Self {
            id: self.id,
            pixels,
            label: self.label,
            mask: self.mask.clone(),
        }
    }
}

/// Centered rectangle covering 60% of the image, standing in for a missing
/// instance mask.
pub fn pseudo_mask(height: usize, width: usize) -> Tensor {
    let side = libm::sqrt(0.6);
    let mh = libm::round(height as f64 * side) as usize;
    let mw = libm::round(width as f64 * side) as usize;
    let (y0, x0) = ((height - mh) / 2, (width - mw) / 2);
    let mut m = Tensor::zeros(&[height, width]);
    for y in y0..y0 + mh {
        for x in x0..x0 + mw {
            m.data_mut()[y * width + x] = 1.0;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    GaussianBlur,
    Brightness,
    Contrast,
    Grayscale,
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 7] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Grayscale,
        CorruptionKind::Pixelate,
    ];
}

/// Per-kind magnitude for severities 1 through 5.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SeverityTables {
    /// Noise standard deviation.
    pub gaussian_noise: [f64; 5],
    /// Fraction of pixels set to black or white.
    pub impulse_noise: [f64; 5],
    /// Blur sigma; severities 1-2 use a 3×3 kernel, 3-5 a 5×5 kernel.
    pub gaussian_blur: [f64; 5],
    /// Additive brightness shift.
    pub brightness: [f64; 5],
    /// Contrast factor around the image mean.
    pub contrast: [f64; 5],
    /// Blend weight towards luminance.
    pub grayscale: [f64; 5],
    /// Downscale factor before nearest-neighbour upscaling.
    pub pixelate: [f64; 5],
}

impl Default for SeverityTables {
    fn default() -> Self {
        Self {
            gaussian_noise: [0.02, 0.04, 0.08, 0.12, 0.18],
            impulse_noise: [0.01, 0.015, 0.02, 0.03, 0.04],
            gaussian_blur: [0.4, 0.55, 0.7, 0.85, 1.0],
            brightness: [0.05, 0.08, 0.11, 0.14, 0.18],
            contrast: [0.9, 0.8, 0.7, 0.6, 0.5],
            grayscale: [0.2, 0.4, 0.6, 0.8, 1.0],
            pixelate: [0.9, 0.85, 0.8, 0.75, 0.7],
        }
    }
}

impl SeverityTables {
    pub fn value(&self, kind: CorruptionKind, severity: u8) -> f64 {
        let i = (severity.clamp(1, 5) - 1) as usize;
        match kind {
            CorruptionKind::GaussianNoise => self.gaussian_noise[i],
            CorruptionKind::ImpulseNoise => self.impulse_noise[i],
            CorruptionKind::GaussianBlur => self.gaussian_blur[i],
            CorruptionKind::Brightness => self.brightness[i],
            CorruptionKind::Contrast => self.contrast[i],
            CorruptionKind::Grayscale => self.grayscale[i],
            CorruptionKind::Pixelate => self.pixelate[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CorruptionConfig {
    /// Minimum gate: a corruption runs only when its draw exceeds this.
    pub threshold: f64,
    /// Inclusive severity bounds within `1..=5`.
    pub severity_range: [u8; 2],
    /// Corruption kinds in application order.
    pub enabled: Vec<CorruptionKind>,
    pub severities: SeverityTables,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            severity_range: [1, 5],
            enabled: CorruptionKind::ALL.to_vec(),
            severities: SeverityTables::default(),
        }
    }
}

impl CorruptionConfig {
    /// A configuration that never corrupts.
    pub fn disabled() -> Self {
        Self {
            threshold: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(alloc::format!(
                "corruption threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        let [lo, hi] = self.severity_range;
        if lo < 1 || hi > 5 || lo > hi {
            return Err(Error::InvalidConfig(alloc::format!(
                "severity range [{lo}, {hi}] must lie within [1, 5]"
            )));
        }
        Ok(())
    }
}

/// Share of the donor's area covered by the background patch. Small patches
/// mostly carry donor background and texture rather than the donor's object,
/// which would otherwise contradict the kept label.
pub const PATCH_AREA: core::ops::RangeInclusive<f64> = 0.1..=0.3;

/// Keeps the masked object and replaces the background with a random crop of
/// `donor` (see [`PATCH_AREA`]) resized by nearest neighbour.
pub fn background_substitute(
    image: &LabeledImage,
    donor: &LabeledImage,
    rng: &mut impl Rng,
) -> Result<LabeledImage> {
    let mask = image.mask().ok_or(Error::MissingMask)?;
    if donor.label == image.label {
        return Err(Error::NoDonor { label: image.label });
    }
    let (h, w) = (image.height(), image.width());
    let (dh, dw) = (donor.height(), donor.width());
    let area = rng.random_range(PATCH_AREA);
    let side = libm::sqrt(area);
    let ch = (libm::round(dh as f64 * side) as usize).clamp(1, dh);
    let cw = (libm::round(dw as f64 * side) as usize).clamp(1, dw);
    let y0 = rng.random_range(0..=dh - ch);
    let x0 = rng.random_range(0..=dw - cw);

    let src = image.pixels().data();
    let don = donor.pixels().data();
    let m = mask.data();
    let mut out = vec![0.0; src.len()];
    for c in 0..3 {
        for y in 0..h {
            let sy = y0 + y * ch / h;
            for x in 0..w {
                let sx = x0 + x * cw / w;
                let patch = don[c * dh * dw + sy * dw + sx];
                let i = y * w + x;
                let mi = m[i];
                out[c * h * w + i] = mi * src[c * h * w + i] + (1.0 - mi) * patch;
            }
        }
    }
    Ok(image.with_pixels(out))
}

/// Applies each enabled corruption whose gate draw exceeds the threshold.
pub fn apply_corruptions(
    image: &LabeledImage,
    config: &CorruptionConfig,
    rng: &mut impl Rng,
) -> LabeledImage {
    let [lo, hi] = config.severity_range;
    let mut px = image.pixels().data().to_vec();
    let (h, w) = (image.height(), image.width());
    for &kind in &config.enabled {
        let gate: f64 = rng.random();
        let severity = rng.random_range(lo..=hi);
        if gate > config.threshold {
            let v = config.severities.value(kind, severity);
            corrupt(&mut px, h, w, kind, severity, v, rng);
            for p in &mut px {
                *p = p.clamp(0.0, 1.0);
            }
        }
    }
    image.with_pixels(px)
}

fn corrupt(px: &mut [f64], h: usize, w: usize, kind: CorruptionKind, severity: u8, v: f64, rng: &mut impl Rng) {
    let plane = h * w;
    match kind {
        CorruptionKind::GaussianNoise => {
            for p in px.iter_mut() {
                *p += v * rng::normal(rng);
            }
        }
        CorruptionKind::ImpulseNoise => {
            for i in 0..plane {
                if rng.random::<f64>() < v {
                    let val = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    for c in 0..3 {
                        px[c * plane + i] = val;
                    }
                }
            }
        }
        CorruptionKind::GaussianBlur => {
            let radius = if severity <= 2 { 1 } else { 2 };
            gaussian_blur(px, h, w, v, radius);
        }
        CorruptionKind::Brightness => {
            for p in px.iter_mut() {
                *p += v;
            }
        }
        CorruptionKind::Contrast => {
            for c in 0..3 {
                let ch = &mut px[c * plane..(c + 1) * plane];
                let mean = ch.iter().sum::<f64>() / plane as f64;
                for p in ch.iter_mut() {
                    *p = mean + (*p - mean) * v;
                }
            }
        }
        CorruptionKind::Grayscale => {
            for i in 0..plane {
                let (r, g, b) = (px[i], px[plane + i], px[2 * plane + i]);
                let lum = 0.299 * r + 0.587 * g + 0.114 * b;
                for c in 0..3 {
                    let p = &mut px[c * plane + i];
                    *p = (1.0 - v) * *p + v * lum;
                }
            }
        }
        CorruptionKind::Pixelate => {
            let sh = ((libm::round(h as f64 * v)) as usize).max(1);
            let sw = ((libm::round(w as f64 * v)) as usize).max(1);
            let src = px.to_vec();
            for c in 0..3 {
                for y in 0..h {
                    // Sample the centre of the low-resolution cell this pixel falls in.
                    let cy = ((y * sh / h) * h + h / 2) / sh;
                    for x in 0..w {
                        let cx = ((x * sw / w) * w + w / 2) / sw;
                        px[c * plane + y * w + x] = src[c * plane + cy.min(h - 1) * w + cx.min(w - 1)];
                    }
                }
            }
        }
    }
}

fn gaussian_blur(px: &mut [f64], h: usize, w: usize, sigma: f64, radius: usize) {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| libm::exp(-((d * d) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    let plane = h * w;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; plane];
    for c in 0..3 {
        let ch = &mut px[c * plane..(c + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (-r..=r)
                    .zip(&k)
                    .map(|(d, kv)| kv * ch[y * w + clamp(x as isize + d, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                ch[y * w + x] = (-r..=r)
                    .zip(&k)
                    .map(|(d, kv)| kv * tmp[clamp(y as isize + d, h) * w + x])
                    .sum();
            }
        }
    }
}

/// Background substitution then corruptions for every batch item, with
/// donors drawn from `pool` among images of a different class.
///
/// Item `i` uses its own stream derived from one draw of `rng` and `i`, so
/// results do not depend on processing order.
pub fn enhance_batch(
    batch: &[LabeledImage],
    pool: &[LabeledImage],
    config: &CorruptionConfig,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledImage>> {
    let base = rng.next_u64();
    batch
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let mut r: Stream = rng::stream(base, &[i as u64]);
            let donors: Vec<&LabeledImage> = pool.iter().filter(|d| d.label != item.label).collect();
            let donor = donors
                .choose(&mut r)
                .ok_or(Error::NoDonor { label: item.label })?;
            let substituted = background_substitute(item, donor, &mut r)?;
            Ok(apply_corruptions(&substituted, config, &mut r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(id: u64, label: usize, rgb: [f64; 3], mask: Option<Tensor>) -> LabeledImage {
        let (h, w) = (6, 6);
        let mut data = Vec::new();
        for c in rgb {
            data.extend(core::iter::repeat_n(c, h * w));
        }
        LabeledImage::new(id, Tensor::new(&[3, h, w], data).unwrap(), label, mask).unwrap()
    }

    #[test]
    fn new_clamps_and_checks_mask() {
        let img = LabeledImage::new(0, Tensor::full(&[3, 2, 2], 1.5), 0, None).unwrap();
        assert!(img.pixels().data().iter().all(|&v| v == 1.0));
        assert!(LabeledImage::new(0, Tensor::zeros(&[3, 2, 2]), 0, Some(Tensor::full(&[2, 2], 0.5))).is_err());
        assert!(LabeledImage::new(0, Tensor::zeros(&[3, 2, 2]), 0, Some(Tensor::zeros(&[3, 2]))).is_err());
    }

    #[test]
    fn full_mask_keeps_image() {
        let img = constant(0, 0, [0.2, 0.4, 0.6], Some(Tensor::full(&[6, 6], 1.0)));
        let donor = constant(1, 1, [0.9, 0.1, 0.5], None);
        let out = background_substitute(&img, &donor, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn empty_mask_takes_donor() {
        let img = constant(0, 0, [0.2, 0.4, 0.6], Some(Tensor::zeros(&[6, 6])));
        let donor = constant(1, 1, [0.9, 0.1, 0.5], None);
        let out = background_substitute(&img, &donor, &mut rng::stream(1, &[])).unwrap();
        assert_eq!(out.pixels(), donor.pixels());
        assert_eq!(out.label, 0);
    }

    #[test]
    fn substitution_errors() {
        let img = constant(0, 0, [0.2; 3], None);
        let donor = constant(1, 1, [0.9; 3], None);
        assert_eq!(
            background_substitute(&img, &donor, &mut rng::stream(1, &[])).unwrap_err(),
            Error::MissingMask
        );
        let img = constant(0, 1, [0.2; 3], Some(Tensor::zeros(&[6, 6])));
        assert!(matches!(
            background_substitute(&img, &donor, &mut rng::stream(1, &[])),
            Err(Error::NoDonor { .. })
        ));
    }

    #[test]
    fn closed_gate_is_identity() {
        let img = constant(0, 0, [0.2, 0.4, 0.6], None);
        let out = apply_corruptions(&img, &CorruptionConfig::disabled(), &mut rng::stream(5, &[]));
        assert_eq!(out, img);
    }

    #[test]
    fn every_kind_stays_in_range() {
        for kind in CorruptionKind::ALL {
            for sev in 1..=5 {
                let cfg = CorruptionConfig {
                    threshold: 0.0,
                    severity_range: [sev, sev],
                    enabled: vec![kind],
                    ..Default::default()
                };
                let img = constant(0, 0, [0.05, 0.5, 0.97], Some(Tensor::full(&[6, 6], 1.0)));
                let out = apply_corruptions(&img, &cfg, &mut rng::stream(sev as u64, &[]));
                assert!(out.pixels().data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind:?}");
                assert_eq!(out.mask(), img.mask());
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(CorruptionConfig::default().validate().is_ok());
        let bad = CorruptionConfig {
            threshold: 1.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CorruptionConfig {
            severity_range: [0, 3],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CorruptionConfig {
            severity_range: [4, 2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pseudo_mask_area() {
        let m = pseudo_mask(32, 32);
        let frac = m.sum() / 1024.0;
        assert!((frac - 0.6).abs() < 0.05, "{frac}");
    }

    #[test]
    fn batch_edge_cases() {
        let mut r = rng::stream(1, &[]);
        assert!(enhance_batch(&[], &[], &CorruptionConfig::default(), &mut r).unwrap().is_empty());
        let img = constant(0, 0, [0.2; 3], Some(Tensor::zeros(&[6, 6])));
        let same = constant(1, 0, [0.4; 3], None);
        assert!(matches!(
            enhance_batch(&[img], &[same], &CorruptionConfig::default(), &mut r),
            Err(Error::NoDonor { label: 0 })
        ));
    }
}
