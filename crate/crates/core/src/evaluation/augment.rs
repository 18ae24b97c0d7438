use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::resize_bilinear;
use crate::error::{bail, Result};
use crate::puzzle::ImageTensor;

/// Training set size produced for small real-world classes.
pub const ZOOM_TARGET: usize = 800;

/// Range of the crop side relative to the image side.
pub const ZOOM_SCALES: (f64, f64) = (0.8, 1.0);

/// Central crop of relative side `scale`, resized back to the original shape.
pub fn zoom(img: &ImageTensor, scale: f64) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let (top, left) = ((h - ch) / 2, (w - cw) / 2);
    let mut data = Vec::with_capacity(c * ch * cw);
    for k in 0..c {
        for y in top..top + ch {
            let start = img.index(k, y, left);
            data.extend_from_slice(&img.data()[start..start + cw]);
        }
    }
    resize_bilinear(&ImageTensor::new(c, ch, cw, data)?, h, w)
}

/// Keeps every input image and appends zoomed copies until `target` images
/// exist. Inputs already at or above `target` pass through unchanged.
pub fn zoom_augment(images: &[ImageTensor], target: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    if images.is_empty() {
        bail!(Data, "cannot augment an empty image set");
    }
    let mut out = images.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::new();
    while out.len() < target {
        if order.is_empty() {
            order = (0..images.len()).collect();
            order.shuffle(&mut rng);
        }
        let i = order.pop().expect("refilled above");
        let scale = rng.random_range(ZOOM_SCALES.0..=ZOOM_SCALES.1);
        out.push(zoom(&images[i], scale)?);
    }
    Ok(out)
}
