use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// A `C x H x W` image with values in `[0, 1]`, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image, rejecting wrong lengths, unsupported channel counts and
    /// values outside `[0, 1]`.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            bail!(Shape, "images must have 1 or 3 channels, got {channels}");
        }
        if height == 0 || width == 0 {
            bail!(Shape, "empty image {height}x{width}");
        }
        if data.len() != channels * height * width {
            bail!(
                Shape,
                "expected {} values for {channels}x{height}x{width}, got {}",
                channels * height * width,
                data.len()
            );
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            bail!(Shape, "pixel value {v} outside [0, 1]");
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    /// Clamps arbitrary reals into range. Used after perturbation and resampling.
    pub(crate) fn from_clamped(channels: usize, height: usize, width: usize, mut data: Vec<f32>) -> Self {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub(crate) fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    /// Euclidean distance between two images of equal shape.
    pub fn l2_distance(&self, other: &ImageTensor) -> Result<f64> {
        if self.shape() != other.shape() {
            bail!(Shape, "shape mismatch {:?} vs {:?}", self.shape(), other.shape());
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.data, (1, self.channels, self.height, self.width), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Reads one image out of a `[B, C, H, W]` tensor, clamping into `[0, 1]`.
    pub fn from_batch_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        let data = t.get(index)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Ok(Self::from_clamped(c, h, w, data))
    }
}

/// Stacks images of identical shape into a `[B, C, H, W]` tensor.
pub fn stack_images<'a, I>(images: I, dtype: DType, device: &Device) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a ImageTensor>,
{
    let mut shape = None;
    let mut buf = Vec::new();
    let mut n = 0;
    for img in images {
        match shape {
            None => shape = Some(img.shape()),
            Some(s) if s != img.shape() => {
                bail!(Shape, "cannot batch images of shapes {:?} and {:?}", s, img.shape())
            }
            _ => {}
        }
        buf.extend_from_slice(img.data());
        n += 1;
    }
    let Some((c, h, w)) = shape else {
        bail!(Shape, "cannot batch zero images");
    };
    let t = Tensor::from_vec(buf, (n, c, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Splits a `[B, C, H, W]` tensor back into images.
pub fn unstack_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let (b, c, h, w) = t.dims4()?;
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let per = c * h * w;
    Ok((0..b)
        .map(|i| ImageTensor::from_clamped(c, h, w, flat[i * per..(i + 1) * per].to_vec()))
        .collect())
}
