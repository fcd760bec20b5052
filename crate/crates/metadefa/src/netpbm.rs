//! Binary PPM (`P6`) and PGM (`P5`) images.
//!
//! Pixels map to `[0, 1]` as `sample / maxval`. Writers always use
//! `maxval = 255`, so any tensor whose values are multiples of `1/255`
//! survives a write/read cycle bit-exactly.

use std::fs;
use std::path::Path;

use metadefa_core::Tensor;

use crate::error::{Error, Result};

/// A decoded netpbm raster with samples scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Interleaved, row-major.
    pub samples: Vec<f64>,
}

impl Raster {
    /// Planar `[channels, height, width]` tensor.
    pub fn to_planar(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = vec![0.0; self.samples.len()];
        for i in 0..plane {
            for c in 0..self.channels {
                data[c * plane + i] = self.samples[i * self.channels + c];
            }
        }
        Tensor::new(&[self.channels, self.height, self.width], data).expect("sized from raster")
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a `P5` or `P6` file held in memory. `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(malformed(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(malformed(path, format!("unsupported magic `{other}`"))),
    };
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse()
            .map_err(|_| malformed(path, format!("bad {what} `{t}`")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 || !(1..=65535).contains(&maxval) {
        return Err(malformed(path, "zero dimension or maxval outside 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let count = width * height * channels;
    let raster = bytes
        .get(start..start + count * bytes_per)
        .ok_or_else(|| malformed(path, "raster shorter than declared size"))?;
    let scale = maxval as f64;
    let samples = if bytes_per == 1 {
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / scale)
            .collect()
    };
    Ok(Raster {
        width,
        height,
        channels,
        samples,
    })
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(Error::read(path))?;
    decode(&bytes, path)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_raw(path: &Path, magic: &str, width: usize, height: usize, raster: &[u8]) -> Result<()> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::write(dir))?;
    }
    fs::write(path, out).map_err(Error::write(path))
}

/// Writes a `[3, H, W]` tensor with values in `[0, 1]` as `P6`.
pub fn write_ppm(path: &Path, pixels: &Tensor) -> Result<()> {
    let s = pixels.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(malformed(path, format!("expected a [3, H, W] tensor, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let d = pixels.data();
    let raster: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |c| quantize(d[c * plane + i])))
        .collect();
    write_raw(path, "P6", w, h, &raster)
}

/// Writes an `[H, W]` tensor with values in `[0, 1]` as `P5`.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(malformed(path, format!("expected an [H, W] tensor, got {s:?}")));
    }
    let raster: Vec<u8> = map.data().iter().map(|&v| quantize(v)).collect();
    write_raw(path, "P5", s[1], s[0], &raster)
}

/// Writes raw 8-bit gray levels as `P5`.
pub fn write_gray(path: &Path, width: usize, height: usize, levels: &[u8]) -> Result<()> {
    if levels.len() != width * height {
        return Err(malformed(path, "gray raster size does not match dimensions"));
    }
    write_raw(path, "P5", width, height, levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_comments_and_both_depths() {
        let p = Path::new("mem");
        let mut b = b"P5\n# a comment\n2 1\n255\n".to_vec();
        b.extend([0u8, 255]);
        let r = decode(&b, p).unwrap();
        assert_eq!((r.width, r.height, r.channels), (2, 1, 1));
        assert_eq!(r.samples, vec![0.0, 1.0]);

        let mut b = b"P6 1 1 65535 ".to_vec();
        b.extend([0xFF, 0xFF, 0x00, 0x00, 0x80, 0x00]);
        let r = decode(&b, p).unwrap();
        assert_eq!(r.samples[0], 1.0);
        assert_eq!(r.samples[1], 0.0);
    }

    #[test]
    fn rejects_bad_headers() {
        let p = Path::new("mem");
        assert!(decode(b"P3\n1 1\n255\n", p).is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00", p).is_err());
        assert!(decode(b"P5\n0 2\n255\n", p).is_err());
        assert!(decode(b"P5\n2", p).is_err());
    }

    #[test]
    fn planar_conversion_deinterleaves() {
        let r = Raster {
            width: 2,
            height: 1,
            channels: 3,
            samples: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        };
        assert_eq!(r.to_planar().data(), &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
