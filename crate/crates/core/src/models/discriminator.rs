use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamStore, INIT_STD};
use crate::error::{bail, Result};

const LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    pub image_size: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { channels: 1, image_size: 32, base_channels: 64 }
    }
}

/// Logits and the feature-tap activations of one forward pass.
pub struct DiscriminatorOutput {
    /// `[B]` real/fake logits.
    pub logits: Tensor,
    /// `[B, F]` flattened activations of the last strided block.
    pub features: Tensor,
}

/// DCGAN-style classifier: 4x4 stride-2 convolutions with leaky ReLU until the
/// feature map is smaller than 8 pixels, then a single full-size convolution
/// to one logit.
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    blocks: Vec<Conv2d>,
    head: Conv2d,
    feature_dim: usize,
}

impl Discriminator {
    pub fn build(config: &DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        if config.image_size < 8 {
            bail!(Config, "discriminator needs images of at least 8 pixels, got {}", config.image_size);
        }
        if config.base_channels == 0 || (config.channels != 1 && config.channels != 3) {
            bail!(Config, "invalid discriminator channels {:?}", config);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new(dtype, Device::Cpu);
        let strided = Conv2dConfig { padding: 1, stride: 2, ..Default::default() };
        let mut blocks = Vec::new();
        let (mut size, mut cin) = (config.image_size, config.channels);
        let mut i = 0;
        while size >= 8 {
            let cout = config.base_channels << i.min(3);
            blocks.push(params.conv2d(&format!("block{i}"), cin, cout, 4, strided, Init::Normal(INIT_STD), &mut rng)?);
            cin = cout;
            size /= 2;
            i += 1;
        }
        let head = params.conv2d("head", cin, 1, size, Conv2dConfig::default(), Init::Normal(INIT_STD), &mut rng)?;
        Ok(Self { config: config.clone(), params, blocks, head, feature_dim: cin * size * size })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.config.channels || h != self.config.image_size || w != self.config.image_size {
            bail!(Shape, "discriminator got input of shape {:?}", x.dims());
        }
        let mut h = x.clone();
        for block in &self.blocks {
            h = candle_nn::ops::leaky_relu(&block.forward(&h)?, LEAK)?;
        }
        let features = h.flatten_from(1)?;
        let logits = self.head.forward(&h)?.reshape(b)?;
        Ok(DiscriminatorOutput { logits, features })
    }
}
