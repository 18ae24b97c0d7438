use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::puzzle::{luma, ImageTensor};

/// Collapses RGB to one channel with the BT.601 luma weights. Grayscale
/// images pass through unchanged.
pub fn to_grayscale(img: &ImageTensor) -> ImageTensor {
    if img.channels() == 1 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(luma(img.get(0, y, x), img.get(1, y, x), img.get(2, y, x)));
        }
    }
    ImageTensor::from_clamped(1, h, w, out)
}

/// Repeats a grayscale image into three identical channels.
pub fn to_rgb(img: &ImageTensor) -> ImageTensor {
    if img.channels() == 3 {
        return img.clone();
    }
    let mut data = img.data().to_vec();
    data.extend_from_slice(img.data());
    data.extend_from_slice(img.data());
    ImageTensor::from_clamped(3, img.height(), img.width(), data)
}

/// Source coordinate and weights for one output index (half-pixel centres,
/// edge clamped).
fn taps(o: usize, out_len: usize, in_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (src - i0 as f64) as f32)
}

/// Bilinear resampling to `height x width`.
pub fn resize_bilinear(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        bail!(Shape, "cannot resize to {height}x{width}");
    }
    if (height, width) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let ys: Vec<_> = (0..height).map(|o| taps(o, height, img.height())).collect();
    let xs: Vec<_> = (0..width).map(|o| taps(o, width, img.width())).collect();
    let mut out = Vec::with_capacity(img.channels() * height * width);
    for c in 0..img.channels() {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
                let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(ImageTensor::from_clamped(img.channels(), height, width, out))
}

/// Centres the image on a zero canvas; odd margins put the extra pixel at the
/// bottom and right.
pub fn pad_to_canvas(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if img.height() > height || img.width() > width {
        bail!(
            Shape,
            "{}x{} image does not fit a {height}x{width} canvas",
            img.height(),
            img.width()
        );
    }
    let top = (height - img.height()) / 2;
    let left = (width - img.width()) / 2;
    let mut out = ImageTensor::zeros(img.channels(), height, width)?;
    for c in 0..img.channels() {
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.set(c, top + y, left + x, img.get(c, y, x));
            }
        }
    }
    Ok(out)
}

/// How source images are brought onto the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanvasFit {
    /// Zero-pad smaller images; larger ones are resized.
    #[default]
    Pad,
    /// Always resize bilinearly.
    Resize,
}

pub fn fit_to_canvas(img: &ImageTensor, canvas: (usize, usize), fit: CanvasFit) -> Result<ImageTensor> {
    let (h, w) = canvas;
    let fits = img.height() <= h && img.width() <= w;
    match fit {
        CanvasFit::Pad if fits => pad_to_canvas(img, h, w),
        _ => resize_bilinear(img, h, w),
    }
}

/// Converts to the requested channel count.
pub fn with_channels(img: &ImageTensor, channels: usize) -> Result<ImageTensor> {
    match channels {
        1 => Ok(to_grayscale(img)),
        3 => Ok(to_rgb(img)),
        _ => bail!(Config, "channels must be 1 or 3, got {channels}"),
    }
}
