//! CAM / CAAM heatmap export as 8-bit PGM.

use std::path::{Path, PathBuf};

use metadefa_core::losses::minmax_normalize;
use metadefa_core::{ParamSet, Tensor, TinyCnn};

use crate::dataset::resize_nearest;
use crate::error::Result;
use crate::netpbm;

/// Output file names, in the order written.
pub const FILES: [&str; 4] = ["cam.pgm", "caam.pgm", "cam_aug.pgm", "caam_aug.pgm"];

/// Min-max scales an `[h, w]` map to `0..=255` and upscales it to
/// `out_h × out_w` by nearest neighbour. A constant map becomes all zeros.
pub fn gray_levels(map: &Tensor, out_h: usize, out_w: usize) -> Vec<u8> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let scaled = minmax_normalize(map);
    resize_nearest(scaled.data(), 1, h, w, out_h, out_w)
        .into_iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes the CAM and CAAM of `original` and `augmented` for class `label`
/// into `dir` as `out_h × out_w` images. Returns the written paths.
pub fn export(
    model: &TinyCnn,
    params: &ParamSet,
    original: &Tensor,
    augmented: &Tensor,
    label: usize,
    dir: &Path,
    (h, w): (usize, usize),
) -> Result<Vec<PathBuf>> {
    let ori = model.forward(params, original, label)?;
    let aug = model.forward(params, augmented, label)?;
    let maps = [&ori.cam, &ori.caam, &aug.cam, &aug.caam];
    let mut written = Vec::with_capacity(FILES.len());
    for (name, map) in FILES.iter().zip(maps) {
        let path = dir.join(name);
        netpbm::write_gray(&path, w, h, &gray_levels(map, h, w))?;
        written.push(path);
    }
    Ok(written)
}
