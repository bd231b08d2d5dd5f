//! Non-overlapping tiling with a tissue-fraction filter.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchConfig {
    pub size: usize,
    /// Minimum foreground fraction for a tile to be kept.
    pub tissue_threshold: f64,
    /// A pixel is background when its channel mean is at or above this.
    pub background_cutoff: f32,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: 224,
            tissue_threshold: 0.70,
            background_cutoff: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Top-left pixel.
    pub y: usize,
    pub x: usize,
    pub foreground: f64,
    pub tensor: Tensor<f32>,
}

/// Row-major candidate tiles; edge remainders are cropped.
pub fn tile_origins(height: usize, width: usize, size: usize) -> Vec<(usize, usize)> {
    if size == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for ty in 0..height / size {
        for tx in 0..width / size {
            out.push((ty * size, tx * size));
        }
    }
    out
}

/// Fraction of pixels in the `size`² window at (y, x) whose channel mean is below `cutoff`.
pub fn foreground_fraction(image: &Tensor<f32>, y: usize, x: usize, size: usize, cutoff: f32) -> f64 {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let d = image.data();
    let mut fg = 0usize;
    for yy in y..y + size {
        for xx in x..x + size {
            let mean = (0..c).map(|ch| d[(ch * h + yy) * w + xx]).sum::<f32>() / c as f32;
            if mean < cutoff {
                fg += 1;
            }
        }
    }
    fg as f64 / (size * size) as f64
}

pub fn patchify(image: &Tensor<f32>, config: &PatchConfig) -> Result<Vec<Patch>> {
    if image.shape().len() != 3 {
        return Err(Error::Contract("patchify expects a [C, H, W] image".into()));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if config.size == 0 || config.size > h || config.size > w {
        return Err(Error::Contract(alloc::format!(
            "patch size {} does not fit a {h}x{w} image",
            config.size
        )));
    }
    let s = config.size;
    let d = image.data();
    let mut out = Vec::new();
    for (y, x) in tile_origins(h, w, s) {
        let foreground = foreground_fraction(image, y, x, s, config.background_cutoff);
        if foreground < config.tissue_threshold {
            continue;
        }
        let tensor = Tensor::from_fn(&[c, s, s], |i| {
            let (ch, rem) = (i / (s * s), i % (s * s));
            d[(ch * h + y + rem / s) * w + x + rem % s]
        });
        out.push(Patch { y, x, foreground, tensor });
    }
    Ok(out)
}
