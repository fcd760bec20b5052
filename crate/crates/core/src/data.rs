//! Domain datasets and the synthetic multi-domain shape benchmark.
//!
//! Class identity is the shape geometry only. Domains differ in background
//! hue family, background texture and global sensor noise; foreground colour
//! is drawn independently of both class and domain.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::augment::LabeledImage;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub samples: Vec<LabeledImage>,
    pub class_names: Vec<String>,
}

impl DomainDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.class_names.len();
        let mut seen = vec![false; n];
        let Some(first) = self.samples.first() else {
            return Err(Error::InsufficientData(alloc::format!("domain `{}` has no samples", self.name)));
        };
        let dims = first.pixels().shape().to_vec();
        for s in &self.samples {
            if s.label >= n {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    num_classes: n,
                });
            }
            seen[s.label] = true;
            if s.pixels().shape() != dims.as_slice() {
                return Err(crate::error::shape_err("DomainDataset", &dims, s.pixels().shape()));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InsufficientData(alloc::format!(
                "class `{}` absent from domain `{}`",
                self.class_names[missing],
                self.name
            )));
        }
        Ok(())
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_names.len()];
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Texture {
    Flat,
    Stripes,
    Noise,
}

/// Appearance of one domain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DomainStyle {
    pub name: String,
    /// Background hue family centre, degrees.
    pub hue: f64,
    pub saturation: f64,
    /// Background brightness (HSV value).
    pub value: f64,
    pub texture: Texture,
    /// Standard deviation of additive per-pixel noise.
    pub noise_level: f64,
}

impl DomainStyle {
    fn new(name: &str, hue: f64, saturation: f64, value: f64, texture: Texture, noise_level: f64) -> Self {
        Self {
            name: name.into(),
            hue,
            saturation,
            value,
            texture,
            noise_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    /// First entry is conventionally the source domain.
    pub domains: Vec<DomainStyle>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 50,
            image_size: 32,
            domains: vec![
                DomainStyle::new("source", 210.0, 0.15, 0.30, Texture::Flat, 0.02),
                DomainStyle::new("stripes", 30.0, 0.55, 0.45, Texture::Stripes, 0.03),
                DomainStyle::new("speckle", 120.0, 0.45, 0.40, Texture::Noise, 0.04),
                DomainStyle::new("grainy", 300.0, 0.35, 0.30, Texture::Flat, 0.12),
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=Shape::ALL.len()).contains(&self.num_classes) {
            return Err(Error::InvalidConfig(alloc::format!(
                "num_classes must be in 2..={}",
                Shape::ALL.len()
            )));
        }
        if self.domains.len() < 2 {
            return Err(Error::InvalidConfig("at least two domains required".into()));
        }
        if self.per_class == 0 || self.image_size < 8 {
            return Err(Error::InvalidConfig("per_class ≥ 1 and image_size ≥ 8 required".into()));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if self.domains[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidConfig(alloc::format!("duplicate domain `{}`", d.name)));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        Shape::ALL[..self.num_classes]
            .iter()
            .map(|s| String::from(s.name()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Square,
    Triangle,
    Cross,
    Ring,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Disk,
        Shape::Square,
        Shape::Triangle,
        Shape::Cross,
        Shape::Ring,
        Shape::Diamond,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
            Shape::Diamond => "diamond",
        }
    }

    /// Whether offset `(dx, dy)` from the centre lies inside a shape of radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            Shape::Disk => dx * dx + dy * dy <= 0.78 * r * r,
            Shape::Square => ax <= r && ay <= r,
            Shape::Triangle => {
                // Apex up, base at 0.8 r below the centre.
                dy >= -r && dy <= 0.8 * r && ax <= (dy + r) / 1.8
            }
            Shape::Cross => (ax <= 0.16 * r && ay <= r) || (ay <= 0.16 * r && ax <= r),
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= 0.3 * r * r
            }
            Shape::Diamond => ax + ay <= r,
        }
    }
}

/// Placement of one shape instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Binary mask of `shape` at `geom`, sampled at pixel centres.
pub fn rasterize(shape: Shape, geom: Geometry, size: usize) -> Vec<bool> {
    let mut m = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let dx = x as f64 + 0.5 - geom.cx;
            let dy = y as f64 + 0.5 - geom.cy;
            m[y * size + x] = shape.contains(dx, dy, geom.radius);
        }
    }
    m
}

/// Draws the geometry used for a sample; shared with tests that re-rasterize.
pub fn draw_geometry(size: usize, rng: &mut impl Rng) -> Geometry {
    let s = size as f64;
    let jitter = 0.03 * s;
    Geometry {
        cx: 0.5 * s + rng.random_range(-jitter..=jitter),
        cy: 0.5 * s + rng.random_range(-jitter..=jitter),
        radius: s * rng.random_range(0.30..=0.34),
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h - 360.0 * libm::floor(h / 360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn quantize(v: f64) -> f64 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

/// Renders one sample. Returns pixels `[3, S, S]` (multiples of 1/255) and the mask.
fn render(shape: Shape, style: &DomainStyle, size: usize, rng: &mut impl Rng) -> (Geometry, Vec<f64>, Vec<bool>) {
    let geom = draw_geometry(size, rng);
    let mask = rasterize(shape, geom, size);
    let plane = size * size;

    let bg = hsv_to_rgb(
        style.hue + rng.random_range(-20.0..=20.0),
        (style.saturation + rng.random_range(-0.1..=0.1)).clamp(0.0, 1.0),
        (style.value + rng.random_range(-0.08..=0.08)).clamp(0.0, 1.0),
    );
    let fg = hsv_to_rgb(
        rng.random_range(0.0..360.0),
        rng.random_range(0.2..=0.6),
        rng.random_range(0.85..=1.0),
    );
    let period = rng.random_range(3..=6usize);
    let orientation = rng.random_range(0..3u8);

    let mut px = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let shade = match style.texture {
                Texture::Flat => 1.0,
                Texture::Stripes => {
                    let t = match orientation {
                        0 => y,
                        1 => x,
                        _ => x + y,
                    };
                    if (t / period) % 2 == 0 {
                        1.35
                    } else {
                        0.65
                    }
                }
                Texture::Noise => rng.random_range(0.5..=1.5),
            };
            for c in 0..3 {
                px[c * plane + i] = if mask[i] { fg[c] } else { bg[c] * shade };
            }
        }
    }
    if style.noise_level > 0.0 {
        for p in &mut px {
            *p += style.noise_level * rng::normal(rng);
        }
    }
    for p in &mut px {
        *p = quantize(*p);
    }
    (geom, px, mask)
}

/// One dataset per domain descriptor. Each domain uses a stream keyed on its
/// name, so reordering descriptors reorders datasets without changing them.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let size = spec.image_size;
    let class_names = spec.class_names();
    spec.domains
        .iter()
        .map(|style| {
            let mut r = rng::stream(seed, &[rng::tag_of(&style.name)]);
            let mut samples = Vec::with_capacity(spec.num_classes * spec.per_class);
            for label in 0..spec.num_classes {
                for _ in 0..spec.per_class {
                    let (_, px, mask) = render(Shape::ALL[label], style, size, &mut r);
                    let mask = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
                    samples.push(LabeledImage::new(
                        samples.len() as u64,
                        Tensor::new(&[3, size, size], px)?,
                        label,
                        Some(Tensor::new(&[size, size], mask)?),
                    )?);
                }
            }
            Ok(DomainDataset {
                name: style.name.clone(),
                samples,
                class_names: class_names.clone(),
            })
        })
        .collect()
}

/// Geometry of every sample of one domain, replaying the generator's stream.
pub fn replay_geometry(spec: &SyntheticSpec, seed: u64, domain: &str) -> Result<Vec<(Shape, Geometry)>> {
    let style = spec
        .domains
        .iter()
        .find(|d| d.name == domain)
        .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown domain `{domain}`")))?;
    let mut r = rng::stream(seed, &[rng::tag_of(&style.name)]);
    let mut out = Vec::new();
    for label in 0..spec.num_classes {
        for _ in 0..spec.per_class {
            let shape = Shape::ALL[label];
            let (g, _, _) = render(shape, style, spec.image_size, &mut r);
            out.push((shape, g));
        }
    }
    Ok(out)
}
