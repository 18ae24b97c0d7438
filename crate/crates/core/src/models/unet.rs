use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{max_pool2x2, relu};
use super::params::{Init, ParamStore};
use super::Reconstructor;
use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub channels: usize,
    pub image_size: usize,
    /// Number of 2x down-sampling steps.
    pub depth: usize,
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { channels: 1, image_size: 32, depth: 4, base_channels: 64 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            bail!(Config, "U-Net channels must be 1 or 3, got {}", self.channels);
        }
        if self.base_channels == 0 {
            bail!(Config, "base_channels must be positive");
        }
        let stride = 1usize << self.depth;
        if self.image_size == 0 || self.image_size % stride != 0 {
            bail!(
                Config,
                "image size {} is not divisible by 2^depth = {stride}",
                self.image_size
            );
        }
        Ok(())
    }
}

struct DoubleConv {
    first: Conv2d,
    second: Conv2d,
}

impl DoubleConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        relu(&self.second.forward(&relu(&self.first.forward(x)?)?)?)
    }
}

/// Initial bias of the output layer. The untrained network then predicts
/// about 0.05 everywhere instead of 0.5.
pub const OUTPUT_BIAS_INIT: f64 = -3.0;

/// Encoder-decoder with a skip connection at every resolution, ReLU
/// activations, bilinear up-sampling and a sigmoid output. No normalisation
/// layers, so every sample is processed independently of its batch.
pub struct ReconstructionNet {
    config: UNetConfig,
    params: ParamStore,
    encoder: Vec<DoubleConv>,
    decoder: Vec<DoubleConv>,
    head: Conv2d,
    // (rows, cols^T) interpolation matrices indexed by decoder level
    upsample: Vec<(Tensor, Tensor)>,
}

impl ReconstructionNet {
    /// Builds the network with parameters drawn from `seed`.
    pub fn build(config: &UNetConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype, device.clone());
        let pad = Conv2dConfig { padding: 1, ..Default::default() };
        let width = |level: usize| config.base_channels << level;

        let mut encoder = Vec::with_capacity(config.depth + 1);
        for level in 0..=config.depth {
            let cin = if level == 0 { config.channels } else { width(level - 1) };
            let first = params.conv2d(&format!("enc{level}.0"), cin, width(level), 3, pad, Init::FanInUniform, &mut rng)?;
            let second = params.conv2d(&format!("enc{level}.1"), width(level), width(level), 3, pad, Init::FanInUniform, &mut rng)?;
            encoder.push(DoubleConv { first, second });
        }
        let mut decoder = Vec::with_capacity(config.depth);
        let mut upsample = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let cin = width(level + 1) + width(level);
            let first = params.conv2d(&format!("dec{level}.0"), cin, width(level), 3, pad, Init::FanInUniform, &mut rng)?;
            let second = params.conv2d(&format!("dec{level}.1"), width(level), width(level), 3, pad, Init::FanInUniform, &mut rng)?;
            decoder.push(DoubleConv { first, second });
            let coarse = config.image_size >> (level + 1);
            let m = bilinear_matrix(coarse, dtype, &device)?;
            upsample.push((m.clone(), m.t()?.contiguous()?));
        }
        let head = params.conv2d("head", width(0), config.channels, 1, Conv2dConfig::default(), Init::FanInUniform, &mut rng)?;
        params.fill("head.bias", OUTPUT_BIAS_INIT)?;
        Ok(Self { config: config.clone(), params, encoder, decoder, head, upsample })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.channels || h != self.config.image_size || w != self.config.image_size {
            bail!(
                Shape,
                "U-Net expects [B, {}, {s}, {s}], got {:?}",
                self.config.channels,
                x.dims(),
                s = self.config.image_size
            );
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for (level, block) in self.encoder.iter().enumerate() {
            if level > 0 {
                h = max_pool2x2(&h)?;
            }
            h = block.forward(&h)?;
            if level < self.config.depth {
                skips.push(h.clone());
            }
        }
        for level in (0..self.config.depth).rev() {
            let (rows, cols_t) = &self.upsample[level];
            let up = rows.broadcast_matmul(&h.broadcast_matmul(cols_t)?)?;
            let skip = skips.pop().expect("one skip per level");
            h = self.decoder[level].forward(&Tensor::cat(&[&skip, &up], 1)?)?;
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&h)?)?)
    }
}

impl Reconstructor for ReconstructionNet {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }

    fn dtype(&self) -> DType {
        self.params.dtype()
    }
}

/// `(2n x n)` matrix of 2x bilinear interpolation with half-pixel centres.
fn bilinear_matrix(n: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; 2 * n * n];
    for o in 0..2 * n {
        let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = src - i0 as f64;
        m[o * n + i0] += 1.0 - frac;
        m[o * n + i1] += frac;
    }
    Ok(Tensor::from_vec(m, (2 * n, n), device)?.to_dtype(dtype)?)
}
