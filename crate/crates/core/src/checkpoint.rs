//! Self-describing checkpoint archive.
//!
//! A checkpoint is one safetensors file. U-Net parameters are stored under
//! `unet.*`, discriminator parameters under `disc.*`, and the header metadata
//! key `jigsaw` holds a JSON [`CheckpointMeta`] document with the format tag,
//! format version, network and training configs, epoch count, the scoring
//! permutation set and the frozen normalizers.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{bail, Error, Result};
use crate::models::{Discriminator, DiscriminatorConfig, ReconstructionNet, UNetConfig};
use crate::puzzle::{ImageTensor, PermutationSet};
use crate::scoring::{score_images, NormalizerTable, ScoreTable, DEFAULT_SCORING_BATCH};
use crate::training::{FitOutput, TrainConfig};

pub const CHECKPOINT_FORMAT: &str = "jigsaw-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "jigsaw";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub unet: UNetConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub scoring: PermutationSet,
    pub normalizers: NormalizerTable,
    #[serde(default)]
    pub data: Option<DatasetSpec>,
    #[serde(default)]
    pub normal_class: Option<usize>,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub unet: ReconstructionNet,
    pub discriminator: Discriminator,
}

impl Checkpoint {
    pub fn from_fit(out: FitOutput, train: &TrainConfig) -> Result<Self> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            unet: out.unet.config().clone(),
            discriminator: out.discriminator.config().clone(),
            train: train.clone(),
            epoch: out.records.len(),
            scoring: out.scoring,
            normalizers: out.normalizers,
            data: None,
            normal_class: None,
        };
        Ok(Self { meta, unet: out.unet, discriminator: out.discriminator })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: HashMap<String, Tensor> = self.unet.params().export("unet.");
        tensors.extend(self.discriminator.params().export("disc."));
        let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&self.meta)?)]);
        let mut items: Vec<(String, Tensor)> = tensors.into_iter().collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        safetensors::serialize_to_file(items, Some(meta), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (_, header) = SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let Some(json) = header.metadata().as_ref().and_then(|m| m.get(META_KEY)) else {
            bail!(Checkpoint, "{} has no {META_KEY} metadata", path.display());
        };
        let meta: CheckpointMeta = serde_json::from_str(json)?;
        if meta.format != CHECKPOINT_FORMAT {
            bail!(Checkpoint, "unexpected format tag {:?}", meta.format);
        }
        if meta.version != CHECKPOINT_VERSION {
            bail!(Checkpoint, "unsupported checkpoint version {}", meta.version);
        }
        if meta.scoring.len() != meta.normalizers.len() {
            bail!(
                Checkpoint,
                "{} scoring permutations but {} normalizers",
                meta.scoring.len(),
                meta.normalizers.len()
            );
        }
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let unet = ReconstructionNet::build(&meta.unet, DType::F32, 0)?;
        unet.params().import(&tensors, "unet.")?;
        let discriminator = Discriminator::build(&meta.discriminator, DType::F32, 0)?;
        discriminator.params().import(&tensors, "disc.")?;
        Ok(Self { meta, unet, discriminator })
    }

    /// Scores images with the stored permutation set and normalizers.
    pub fn score(&self, images: &[ImageTensor]) -> Result<ScoreTable> {
        score_images(&self.unet, images, &self.meta.scoring.perms, &self.meta.normalizers, DEFAULT_SCORING_BATCH)
    }
}
