//! Image-folder datasets described by a tab-separated manifest.
//!
//! ```text
//! #classes	disk	square	triangle	cross
//! images/source/0000.ppm	masks/source/0000.pgm	disk
//! images/source/0001.ppm	-	square
//! ```
//!
//! Paths are relative to the dataset root. The optional `#classes` header
//! fixes the class order; without it classes are taken in sorted order.
//! A `-` mask column means no instance mask. The dataset is named after the
//! manifest's file stem.

use std::fs;
use std::path::{Path, PathBuf};

use metadefa_core::augment::pseudo_mask;
use metadefa_core::{DomainDataset, LabeledImage, Tensor};

use crate::error::{Error, Result};
use crate::netpbm;

const CLASSES_HEADER: &str = "#classes";

struct Row {
    line: usize,
    image: PathBuf,
    mask: Option<PathBuf>,
    class: String,
}

fn parse_manifest(path: &Path) -> Result<(Option<Vec<String>>, Vec<Row>)> {
    let text = fs::read_to_string(path).map_err(Error::read(path))?;
    let mut classes = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == CLASSES_HEADER {
            classes = Some(fields[1..].iter().map(|s| s.to_string()).collect());
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let [image, mask, class] = fields[..] else {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 3 tab-separated fields, got {}", i + 1, fields.len()),
            });
        };
        rows.push(Row {
            line: i + 1,
            image: image.into(),
            mask: (mask != "-").then(|| mask.into()),
            class: class.to_string(),
        });
    }
    Ok((classes, rows))
}

/// Nearest-neighbour resize of a planar `[C, H, W]` buffer.
pub fn resize_nearest(data: &[f64], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        for y in 0..out_h {
            let sy = y * h / out_h;
            for x in 0..out_w {
                let sx = x * w / out_w;
                out.push(data[c * h * w + sy * w + sx]);
            }
        }
    }
    out
}

/// Loads every manifest row, resizing to `size × size`. Masks are binarized
/// at 0.5; rows without a mask get a centred pseudo-mask and a warning.
pub fn load_image_folder(root: &Path, manifest: &Path, size: usize) -> Result<DomainDataset> {
    let (declared, rows) = parse_manifest(manifest)?;
    if rows.is_empty() {
        return Err(Error::NoSamples(manifest.to_path_buf()));
    }
    let class_names = declared.unwrap_or_else(|| {
        let mut names: Vec<String> = rows.iter().map(|r| r.class.clone()).collect();
        names.sort();
        names.dedup();
        names
    });
    let mut samples = Vec::with_capacity(rows.len());
    let mut unmasked = 0;
    for (id, row) in rows.iter().enumerate() {
        let label = class_names
            .iter()
            .position(|c| *c == row.class)
            .ok_or_else(|| Error::UnknownClass {
                manifest: manifest.to_path_buf(),
                line: row.line,
                class: row.class.clone(),
            })?;
        let image_path = root.join(&row.image);
        let raster = netpbm::read(&image_path)?;
        if raster.channels != 3 {
            return Err(Error::Malformed {
                path: image_path,
                reason: "expected a colour (P6) image".into(),
            });
        }
        let (h, w) = (raster.height, raster.width);
        let pixels = resize_nearest(raster.to_planar().data(), 3, h, w, size, size);
        let mask = match &row.mask {
            Some(rel) => {
                let mask_path = root.join(rel);
                let m = netpbm::read(&mask_path)?;
                if m.channels != 1 || (m.height, m.width) != (h, w) {
                    return Err(Error::MaskShape {
                        path: mask_path,
                        expected: (h, w),
                        found: (m.height, m.width),
                    });
                }
                let bits: Vec<f64> = m.samples.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
                Tensor::new(&[size, size], resize_nearest(&bits, 1, h, w, size, size))?
            }
            None => {
                unmasked += 1;
                pseudo_mask(size, size)
            }
        };
        samples.push(LabeledImage::new(
            id as u64,
            Tensor::new(&[3, size, size], pixels)?,
            label,
            Some(mask),
        )?);
    }
    if unmasked > 0 {
        log::warn!(
            "{}: {unmasked} of {} samples have no mask; using a centred pseudo-mask covering 60% of the image",
            manifest.display(),
            samples.len()
        );
    }
    let name = manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dataset = DomainDataset {
        name,
        samples,
        class_names,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes images, masks and `<name>.tsv` under `root`; returns the manifest path.
pub fn write_domain(root: &Path, dataset: &DomainDataset) -> Result<PathBuf> {
    let mut manifest = String::from(CLASSES_HEADER);
    for c in &dataset.class_names {
        manifest.push('\t');
        manifest.push_str(c);
    }
    manifest.push('\n');
    for (i, s) in dataset.samples.iter().enumerate() {
        let image = format!("images/{}/{i:04}.ppm", dataset.name);
        netpbm::write_ppm(&root.join(&image), s.pixels())?;
        let mask = match s.mask() {
            Some(m) => {
                let rel = format!("masks/{}/{i:04}.pgm", dataset.name);
                netpbm::write_pgm(&root.join(&rel), m)?;
                rel
            }
            None => "-".into(),
        };
        manifest.push_str(&format!("{image}\t{mask}\t{}\n", dataset.class_names[s.label]));
    }
    let path = root.join(format!("{}.tsv", dataset.name));
    fs::create_dir_all(root).map_err(Error::write(root))?;
    fs::write(&path, manifest).map_err(Error::write(&path))?;
    Ok(path)
}
