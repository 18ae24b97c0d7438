//! Run manifests: the resolved configuration plus everything needed to find
//! and verify a run's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{bail, Result};
use crate::puzzle::PermutationSet;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub checkpoint: Option<PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub permutation_count: usize,
    /// SHA-256 of the scoring permutation set in its JSON form.
    pub permutation_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, scoring: &PermutationSet) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            checkpoint: None,
            outputs: BTreeMap::new(),
            permutation_count: scoring.len(),
            permutation_hash: scoring.digest(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.seed != m.config.seed {
            bail!(Config, "manifest seed {} disagrees with its config seed {}", m.seed, m.config.seed);
        }
        m.config.validate()?;
        Ok(m)
    }

    /// Checks a permutation set against the recorded hash.
    pub fn verify_permutations(&self, scoring: &PermutationSet) -> Result<()> {
        if scoring.digest() != self.permutation_hash {
            bail!(Checkpoint, "permutation set does not match the manifest hash");
        }
        Ok(())
    }
}
