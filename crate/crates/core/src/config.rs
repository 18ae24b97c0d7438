//! TOML run configuration.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! root = "data/mnist"
//! format = "idx_pair"      # or "image_folder"
//! channels = 1
//! canvas = [32, 32]
//! fit = "pad"              # or "resize"
//!
//! [experiment]
//! protocol = "2"           # "1", "2" or "medical"
//! normal_class = "1"       # class name: digit or folder name
//! val_fraction = 0.15
//! fraction = 1.0           # training subsample for data-efficiency runs
//!
//! [train]
//! epochs = 50
//! batch_size = 128
//! lambda_adv = 1.0
//! [train.attack]
//! epsilon = 0.05
//! [train.puzzle]
//! perm_mode = "at_least_two"
//! [train.model]
//! depth = 4
//!
//! [eval]
//! aggregation = "max"
//! ```
//!
//! Every key except `data.root` has a default. Precedence is command-line
//! overrides, then the file, then defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::AttackTarget;
use crate::data::DatasetSpec;
use crate::error::{bail, Error, Result};
use crate::evaluation::{AttackVariant, Protocol, DEFAULT_ATTACK_EPSILONS, DEFAULT_TPR_POINTS, DEFAULT_VAL_FRACTION};
use crate::puzzle::{Grid, MaskMode, PermMode};
use crate::scoring::Aggregation;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "protocol_str")]
    pub protocol: Protocol,
    pub normal_class: String,
    pub val_fraction: f64,
    pub fraction: f64,
    /// Cap on normal training images, drawn with the run seed.
    pub train_limit: Option<usize>,
    /// Cap on test images, stratified by label.
    pub test_limit: Option<usize>,
    /// Grow small training sets to this size with zoom augmentation.
    pub zoom_target: Option<usize>,
    /// Validation normals and other-class anomalies scored each of the last
    /// `train.eval_last_epochs` epochs.
    pub monitor_size: Option<usize>,
    /// Collapse colour data to one luma channel.
    pub grayscale: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::Two,
            normal_class: "0".to_string(),
            val_fraction: DEFAULT_VAL_FRACTION,
            fraction: 1.0,
            train_limit: None,
            test_limit: None,
            zoom_target: None,
            monitor_size: None,
            grayscale: false,
        }
    }
}

mod protocol_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::evaluation::Protocol;

    pub fn serialize<S: Serializer>(p: &Protocol, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&p.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Protocol, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        let s = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            Raw::Str(s) => s,
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults by image size: `max` up to 32 px, `avg` above.
    pub aggregation: Option<Aggregation>,
    pub tpr_points: Vec<f64>,
    pub attack_variant: AttackVariant,
    pub attack_epsilons: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            aggregation: None,
            tpr_points: DEFAULT_TPR_POINTS.to_vec(),
            attack_variant: AttackVariant::Attack1,
            attack_epsilons: DEFAULT_ATTACK_EPSILONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DatasetSpec,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda_adv: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub steps: Option<usize>,
    pub mask: Option<MaskMode>,
    pub perm_mode: Option<PermMode>,
    pub aggregation: Option<Aggregation>,
    pub protocol: Option<Protocol>,
    pub fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub normal_class: Option<String>,
}

impl RunConfig {
    pub fn new(data: DatasetSpec) -> Self {
        let mut cfg = Self {
            seed: 0,
            data,
            experiment: ExperimentConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        cfg.sync_from_data(false);
        cfg
    }

    /// Parses and validates a TOML document. Errors carry the line of the
    /// offending key when it can be located.
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        let raw: toml::Table = toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        let explicit_mask = raw
            .get("train")
            .and_then(|t| t.get("puzzle"))
            .is_some_and(|p| p.get("mask_mode").is_some());
        let explicit_canvas = raw
            .get("train")
            .and_then(|t| t.get("puzzle"))
            .is_some_and(|p| p.get("canvas").is_some());
        if explicit_canvas && cfg.train.puzzle.canvas != cfg.data.canvas {
            return Err(locate(
                source,
                Error::Config(format!(
                    "canvas {:?} differs from data.canvas {:?}",
                    cfg.train.puzzle.canvas, cfg.data.canvas
                )),
            ));
        }
        cfg.sync_from_data(explicit_mask);
        cfg.validate().map_err(|e| locate(source, e))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&source).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if cfg.data.root.is_relative() {
            if let Some(dir) = path.parent() {
                let candidate = dir.join(&cfg.data.root);
                if !cfg.data.root.exists() && candidate.exists() {
                    cfg.data.root = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Copies the data canvas into the puzzle config and picks the mask mode
    /// from the channel count unless one was given.
    fn sync_from_data(&mut self, explicit_mask: bool) {
        self.train.puzzle.canvas = self.data.canvas;
        if !explicit_mask {
            self.train.puzzle.mask_mode = MaskMode::for_channels(self.channels());
        }
    }

    /// Channels the network sees after optional grayscale conversion.
    pub fn channels(&self) -> usize {
        if self.experiment.grayscale {
            1
        } else {
            self.data.channels
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        self.eval.aggregation.unwrap_or_else(|| Aggregation::default_for(self.data.canvas.0))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.lambda_adv {
            self.train.lambda_adv = v;
        }
        if let Some(v) = o.epsilon {
            self.train.attack.epsilon = v;
        }
        if let Some(v) = o.alpha {
            self.train.attack.alpha = v;
        }
        if let Some(v) = o.steps {
            self.train.attack.steps = v;
        }
        if let Some(v) = o.mask {
            self.train.puzzle.mask_mode = v;
        }
        if let Some(v) = o.perm_mode {
            self.train.puzzle.perm_mode = v;
            self.train.puzzle.grid = match v {
                PermMode::NinePart => Grid::THREE_BY_THREE,
                _ if self.train.puzzle.grid == Grid::THREE_BY_THREE && v == PermMode::AtLeastTwo => Grid::TWO_BY_TWO,
                _ => self.train.puzzle.grid,
            };
        }
        if let Some(v) = o.aggregation {
            self.eval.aggregation = Some(v);
        }
        if let Some(v) = o.protocol {
            self.experiment.protocol = v;
        }
        if let Some(v) = o.fraction {
            self.experiment.fraction = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = &o.normal_class {
            self.experiment.normal_class = v.clone();
        }
        self.validate()
    }

    /// Seeds every component from the run seed.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.attack.seed = self.seed;
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.train.puzzle.validate(self.channels())?;
        let e = &self.experiment;
        if !(0.0..1.0).contains(&e.val_fraction) {
            bail!(Config, "val_fraction must lie in [0, 1), got {}", e.val_fraction);
        }
        if !(e.fraction > 0.0 && e.fraction <= 1.0) {
            bail!(Config, "fraction must lie in (0, 1], got {}", e.fraction);
        }
        if e.train_limit == Some(0) || e.test_limit == Some(0) {
            bail!(Config, "train_limit and test_limit must be positive");
        }
        if let Some(t) = self.eval.tpr_points.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            bail!(Config, "tpr_points must lie in (0, 1], got {t}");
        }
        if let Some(v) = self.eval.attack_epsilons.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            bail!(Config, "attack_epsilons must be >= 0, got {v}");
        }
        if self.train.attack.target == AttackTarget::Original && !self.train.attack.is_active() {
            log::debug!("attack target is ignored while epsilon is 0");
        }
        Ok(())
    }

    pub fn data_root(&self) -> &PathBuf {
        &self.data.root
    }
}

/// Appends `(line N)` when the error message starts with a key that occurs
/// as `key = ...` in the source.
fn locate(source: &str, err: Error) -> Error {
    let Error::Config(msg) = err else {
        return err;
    };
    let key: String = msg.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
    if key.is_empty() {
        return Error::Config(msg);
    }
    let line = source.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key.as_str()).is_some_and(|rest| rest.trim_start().starts_with('='))
    });
    match line {
        Some(n) => Error::Config(format!("line {}: {msg}", n + 1)),
        None => Error::Config(msg),
    }
}
