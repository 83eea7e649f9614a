//! Inference endpoint: read LR cube and reference containers, run the model
//! from a checkpoint and write the super-resolved cube.

use std::path::Path;

use crate::error::{invalid, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::container;
use crate::network;
use crate::raster::{HsiCube, Raster, RgbImage};

/// Writes the clamped prediction to `out_path` and, when asked, an 8-bit
/// false-color PNG preview.
pub fn fuse(lr_path: &Path, ref_path: &Path, ckpt_path: &Path, out_path: &Path, preview: Option<&Path>) -> Result<HsiCube> {
    let ck = Checkpoint::load(ckpt_path)?;
    let lr = HsiCube::from_raster(container::read(lr_path)?);
    let reference = RgbImage::from_raster(container::read(ref_path)?);
    let y = network::forward(&lr, &reference, &ck.params, &ck.config)?;
    let y = HsiCube::from_raster(y.raster().clamped(0.0, 1.0));
    container::write(out_path, &y)?;
    if let Some(p) = preview {
        write_preview(&y, p)?;
    }
    Ok(y)
}

/// Bands nearest to 80%, 50% and 20% of the range as red, green, blue.
pub fn false_color(x: &Raster) -> Vec<u8> {
    let b = x.channels();
    let pick = |f: f64| ((b - 1) as f64 * f).round() as usize;
    let bands = [pick(0.8), pick(0.5), pick(0.2)];
    let mut out = Vec::with_capacity(x.pixels() * 3);
    for s in x.data().chunks(b) {
        out.extend(bands.iter().map(|&i| (s[i].clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

pub fn write_preview(x: &Raster, path: &Path) -> Result<()> {
    let buf = false_color(x);
    let img = image::RgbImage::from_raw(x.width() as u32, x.height() as u32, buf)
        .ok_or_else(|| invalid("preview buffer size mismatch"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| crate::error::Error::Io(std::io::Error::other(e.to_string())))
}
