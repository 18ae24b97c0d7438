use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scoring::{score_images, Aggregation, DEFAULT_SCORING_BATCH};
use crate::training::{fit, TrainConfig};

use super::metrics::{EvalReport, LabeledScores, DEFAULT_TPR_POINTS};
use super::protocols::OneClassSplit;

/// Sizes of the training subsample for `fraction` of `n` images.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Seeded nested subsample in storage order: for a fixed seed, the sample
/// for a smaller fraction is contained in the sample for a larger one, and
/// `fraction == 1` keeps everything.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        bail!(Config, "fraction must lie in (0, 1], got {fraction}");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = order[..subsample_size(n, fraction)].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// Restricts the training images of a split to a subsample. Validation and
/// test parts are unchanged. Fewer images than one batch is an error.
pub fn subsample_split(split: &OneClassSplit, fraction: f64, batch_size: usize, seed: u64) -> Result<OneClassSplit> {
    let keep = subsample_indices(split.train.len(), fraction, seed)?;
    if keep.len() < batch_size {
        bail!(
            Config,
            "fraction {fraction} leaves {} training images, fewer than one batch of {batch_size}",
            keep.len()
        );
    }
    Ok(OneClassSplit { train: split.train.subset(&keep), ..split.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub n_train: usize,
    pub report: EvalReport,
}

/// Trains from scratch on each subsample and evaluates on the full test split.
pub fn data_efficiency_sweep(
    cfg: &TrainConfig,
    split: &OneClassSplit,
    fractions: &[f64],
    aggregation: Aggregation,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let sub = subsample_split(split, fraction, cfg.batch_size, cfg.seed)?;
        let run = fit(cfg, &sub.train.images, &sub.val.images, None)?;
        let table = score_images(&run.unet, &sub.test.images, &run.scoring.perms, &run.normalizers, DEFAULT_SCORING_BATCH)?;
        let ls = LabeledScores::new(table.aggregates(aggregation), sub.test_anomalous.clone())?;
        let report = EvalReport::from_scores(&ls, aggregation, &DEFAULT_TPR_POINTS)?;
        log::info!("fraction {fraction}: {} images, auroc {:.4}", sub.train.len(), report.auroc);
        out.push(SweepPoint { fraction, n_train: sub.train.len(), report });
    }
    Ok(out)
}
