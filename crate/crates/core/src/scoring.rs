//! Test-time anomaly scores.
//!
//! Every test image is shuffled with each permutation of the scoring set
//! (without masking), reconstructed, and compared to the unshuffled image.
//! Each per-permutation error is divided by that permutation's mean error on
//! normal validation data, and the `K` normalised errors are reduced with
//! `min`, `max` or `avg`. Higher means more anomalous.

use std::fmt;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use crate::adversarial::per_sample_l2;
use crate::error::{bail, Error, Result};
use crate::models::Reconstructor;
use crate::puzzle::{permute_tensor, stack_images, GridPermutation, ImageTensor};

/// Images per forward pass when scoring.
pub const DEFAULT_SCORING_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Min,
    Max,
    Avg,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Min, Aggregation::Max, Aggregation::Avg];

    /// `max` for small toy images (up to 32 px), `avg` for larger real-world ones.
    pub fn default_for(image_size: usize) -> Self {
        if image_size <= 32 {
            Aggregation::Max
        } else {
            Aggregation::Avg
        }
    }

    pub fn reduce(self, values: &[f64]) -> f64 {
        match self {
            Aggregation::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Avg => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Avg => "avg",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            "avg" => Ok(Aggregation::Avg),
            _ => bail!(Config, "unknown aggregation {s:?}; expected min, max or avg"),
        }
    }
}

/// Mean validation error per permutation, in scoring-set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizerTable {
    values: Vec<f64>,
}

impl NormalizerTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            bail!(Eval, "empty normalizer table");
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            bail!(
                Eval,
                "normalizer for permutation {i} is {v}; the model reconstructs validation data perfectly or diverged"
            );
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * s).collect())
    }

    /// Column means of a `[samples][K]` matrix of raw scores.
    pub fn from_raw(raw: &[Vec<f64>]) -> Result<Self> {
        let mut acc = StreamingNormalizer::default();
        for row in raw {
            acc.push(row)?;
        }
        acc.finish()
    }
}

/// Running per-permutation mean, so normalizers can be accumulated batch by
/// batch without holding every raw score.
#[derive(Debug, Clone, Default)]
pub struct StreamingNormalizer {
    count: usize,
    means: Vec<f64>,
}

impl StreamingNormalizer {
    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if self.count == 0 {
            self.means = vec![0.0; row.len()];
        } else if row.len() != self.means.len() {
            bail!(Shape, "score row has {} entries, expected {}", row.len(), self.means.len());
        }
        self.count += 1;
        let n = self.count as f64;
        for (m, x) in self.means.iter_mut().zip(row) {
            *m += (x - *m) / n;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Result<NormalizerTable> {
        if self.count == 0 {
            bail!(Eval, "cannot compute normalizers from an empty validation set");
        }
        NormalizerTable::new(self.means)
    }
}

/// Raw and normalised scores of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

impl ScoreRow {
    pub fn from_raw(raw: Vec<f64>, normalizers: &NormalizerTable) -> Result<Self> {
        if raw.len() != normalizers.len() {
            bail!(
                Shape,
                "{} raw scores but {} normalizers",
                raw.len(),
                normalizers.len()
            );
        }
        let normalized: Vec<f64> = raw.iter().zip(normalizers.values()).map(|(r, n)| r / n).collect();
        Ok(Self {
            min: Aggregation::Min.reduce(&normalized),
            max: Aggregation::Max.reduce(&normalized),
            avg: Aggregation::Avg.reduce(&normalized),
            raw,
            normalized,
        })
    }

    pub fn aggregate(&self, agg: Aggregation) -> f64 {
        match agg {
            Aggregation::Min => self.min,
            Aggregation::Max => self.max,
            Aggregation::Avg => self.avg,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn from_raw(raw: Vec<Vec<f64>>, normalizers: &NormalizerTable) -> Result<Self> {
        let rows = raw
            .into_iter()
            .map(|r| ScoreRow::from_raw(r, normalizers))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn aggregates(&self, agg: Aggregation) -> Vec<f64> {
        self.rows.iter().map(|r| r.aggregate(agg)).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `[samples][K]` matrix of `‖U(P_k(x)) − x‖₂`.
pub fn raw_scores<M: Reconstructor + ?Sized>(
    model: &M,
    images: &[ImageTensor],
    perms: &[GridPermutation],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    if perms.is_empty() {
        bail!(Config, "no permutations to score");
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let original = stack_images(chunk, model.dtype(), &Device::Cpu)?;
        let mut rows = vec![Vec::with_capacity(perms.len()); chunk.len()];
        for perm in perms {
            let recon = model.reconstruct(&permute_tensor(&original, perm)?)?;
            let d: Vec<f64> = per_sample_l2(&recon, &original)?
                .to_dtype(candle_core::DType::F64)?
                .to_vec1()?;
            for (row, v) in rows.iter_mut().zip(d) {
                row.push(v);
            }
        }
        out.extend(rows);
    }
    Ok(out)
}

/// Reconstruction error of one image under one permutation.
pub fn per_permutation_score<M: Reconstructor + ?Sized>(
    model: &M,
    x: &ImageTensor,
    perm: &GridPermutation,
) -> Result<f64> {
    Ok(raw_scores(model, std::slice::from_ref(x), std::slice::from_ref(perm), 1)?[0][0])
}

/// Mean per-permutation error over normal validation images.
pub fn compute_normalizers<M: Reconstructor + ?Sized>(
    model: &M,
    validation: &[ImageTensor],
    perms: &[GridPermutation],
    batch_size: usize,
) -> Result<NormalizerTable> {
    if validation.is_empty() {
        bail!(Eval, "cannot compute normalizers from an empty validation set");
    }
    NormalizerTable::from_raw(&raw_scores(model, validation, perms, batch_size)?)
}

pub fn score_sample<M: Reconstructor + ?Sized>(
    model: &M,
    x: &ImageTensor,
    perms: &[GridPermutation],
    normalizers: &NormalizerTable,
) -> Result<ScoreRow> {
    let raw = raw_scores(model, std::slice::from_ref(x), perms, 1)?.remove(0);
    ScoreRow::from_raw(raw, normalizers)
}

pub fn score_images<M: Reconstructor + ?Sized>(
    model: &M,
    images: &[ImageTensor],
    perms: &[GridPermutation],
    normalizers: &NormalizerTable,
    batch_size: usize,
) -> Result<ScoreTable> {
    if normalizers.len() != perms.len() {
        bail!(Shape, "{} permutations but {} normalizers", perms.len(), normalizers.len());
    }
    ScoreTable::from_raw(raw_scores(model, images, perms, batch_size)?, normalizers)
}
