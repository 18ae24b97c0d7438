use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledImages};
use crate::error::{bail, Result};
use crate::puzzle::ImageTensor;

use super::metrics::mean_std;

/// Share of the normal training images held out for normalizers.
pub const DEFAULT_VAL_FRACTION: f64 = 0.15;

/// Normal images selected for the test split of the medical preset.
pub const MEDICAL_TEST_NORMALS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// 80/20 split of the normal class with as many sampled anomalies as test normals.
    One,
    /// All normal training images against the full test split.
    Two,
    /// Ten normal test images against every anomaly.
    Medical,
}

impl std::str::FromStr for Protocol {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Protocol::One),
            "2" | "two" => Ok(Protocol::Two),
            "medical" => Ok(Protocol::Medical),
            _ => bail!(Config, "unknown protocol {s:?}; expected 1, 2 or medical"),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::One => "1",
            Protocol::Two => "2",
            Protocol::Medical => "medical",
        })
    }
}

/// One-class train/val/test partition. Train and val hold normals only.
#[derive(Debug, Clone, PartialEq)]
pub struct OneClassSplit {
    pub normal_class: usize,
    pub train: LabeledImages,
    pub val: LabeledImages,
    pub test: LabeledImages,
    pub test_anomalous: Vec<bool>,
}

impl OneClassSplit {
    pub fn test_counts(&self) -> (usize, usize) {
        let n_anom = self.test_anomalous.iter().filter(|a| **a).count();
        (self.test_anomalous.len() - n_anom, n_anom)
    }
}

fn shuffled(mut idx: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    idx.shuffle(rng);
    idx
}

fn check_class(images: &LabeledImages, class: usize) -> Result<Vec<usize>> {
    let idx = images.indices_of(class);
    if idx.is_empty() {
        let name = images.class_names.get(class).map_or("?", String::as_str);
        bail!(Data, "class {class} ({name}) has no samples");
    }
    Ok(idx)
}

/// Splits normal indices into `(train, val)` with `round(n·val_fraction)`
/// validation samples, each kept in storage order.
fn carve_val(mut idx: Vec<usize>, val_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        bail!(Config, "val_fraction must lie in [0, 1), got {val_fraction}");
    }
    idx.shuffle(rng);
    let n_val = (idx.len() as f64 * val_fraction).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Every normal training image (minus a seeded validation share) for
/// training; the full test split labelled normal class versus rest.
pub fn protocol2_split(ds: &Dataset, normal_class: usize, val_fraction: f64, seed: u64) -> Result<OneClassSplit> {
    let normals = check_class(&ds.train, normal_class)?;
    if ds.test.is_empty() {
        bail!(Data, "protocol 2 needs a predefined test split");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val) = carve_val(normals, val_fraction, &mut rng)?;
    Ok(OneClassSplit {
        normal_class,
        train: ds.train.subset(&train),
        val: ds.train.subset(&val),
        test: ds.test.clone(),
        test_anomalous: ds.test.labels.iter().map(|&l| l != normal_class).collect(),
    })
}

/// `floor(0.8·n)` normals train (a further `val_fraction` of them is held
/// out for normalizers), the rest are tested against the same number of
/// anomalies sampled without replacement from the other classes.
pub fn protocol1_split(pool: &LabeledImages, normal_class: usize, val_fraction: f64, seed: u64) -> Result<OneClassSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = shuffled(check_class(pool, normal_class)?, &mut rng);
    let n_train = normals.len() * 4 / 5;
    let (fit_idx, test_normals) = normals.split_at(n_train);
    let others: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels[i] != normal_class).collect();
    if others.len() < test_normals.len() {
        bail!(
            Data,
            "only {} anomalies available for {} test normals",
            others.len(),
            test_normals.len()
        );
    }
    let anomalies: Vec<usize> = others.choose_multiple(&mut rng, test_normals.len()).copied().collect();
    let (train, val) = carve_val(fit_idx.to_vec(), val_fraction, &mut rng)?;
    let mut test: Vec<usize> = test_normals.iter().chain(&anomalies).copied().collect();
    test.sort_unstable();
    Ok(OneClassSplit {
        normal_class,
        train: pool.subset(&train),
        val: pool.subset(&val),
        test_anomalous: test.iter().map(|&i| pool.labels[i] != normal_class).collect(),
        test: pool.subset(&test),
    })
}

/// Ten random normals plus every anomaly form the test split; the remaining
/// normals train.
pub fn medical_split(pool: &LabeledImages, normal_class: usize, val_fraction: f64, seed: u64) -> Result<OneClassSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normals = shuffled(check_class(pool, normal_class)?, &mut rng);
    if normals.len() <= MEDICAL_TEST_NORMALS {
        bail!(Data, "medical split needs more than {MEDICAL_TEST_NORMALS} normal images, got {}", normals.len());
    }
    let (test_normals, fit_idx) = normals.split_at(MEDICAL_TEST_NORMALS);
    let anomalies: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels[i] != normal_class).collect();
    if anomalies.is_empty() {
        bail!(Data, "medical split needs at least one anomalous image");
    }
    let (train, val) = carve_val(fit_idx.to_vec(), val_fraction, &mut rng)?;
    let mut test: Vec<usize> = test_normals.iter().chain(&anomalies).copied().collect();
    test.sort_unstable();
    Ok(OneClassSplit {
        normal_class,
        train: pool.subset(&train),
        val: pool.subset(&val),
        test_anomalous: test.iter().map(|&i| pool.labels[i] != normal_class).collect(),
        test: pool.subset(&test),
    })
}

/// Builds the split for `protocol`. Protocols 1 and medical pool the train
/// and test images first.
pub fn split_for(protocol: Protocol, ds: &Dataset, normal_class: usize, val_fraction: f64, seed: u64) -> Result<OneClassSplit> {
    match protocol {
        Protocol::Two => protocol2_split(ds, normal_class, val_fraction, seed),
        Protocol::One => protocol1_split(&pooled(ds), normal_class, val_fraction, seed),
        Protocol::Medical => medical_split(&pooled(ds), normal_class, val_fraction, seed),
    }
}

pub fn pooled(ds: &Dataset) -> LabeledImages {
    let mut all = ds.train.clone();
    all.images.extend(ds.test.images.iter().cloned());
    all.labels.extend(&ds.test.labels);
    all.ids.extend(ds.test.ids.iter().cloned());
    if ds.test.class_names.len() > all.class_names.len() {
        all.class_names = ds.test.class_names.clone();
    }
    all
}

/// Seeded, stratified subsample of a test split keeping at most `max`
/// samples; class proportions are preserved up to rounding.
pub fn subsample_test(split: &OneClassSplit, max: usize, seed: u64) -> OneClassSplit {
    if split.test.len() <= max {
        return split.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_norm, _) = split.test_counts();
    let keep_norm = ((n_norm as f64 * max as f64 / split.test.len() as f64).round() as usize).max(1);
    let pick = |want_anom: bool, k: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let idx: Vec<usize> = (0..split.test.len()).filter(|&i| split.test_anomalous[i] == want_anom).collect();
        idx.choose_multiple(rng, k.min(idx.len())).copied().collect()
    };
    let mut keep = pick(false, keep_norm, &mut rng);
    keep.extend(pick(true, max.saturating_sub(keep_norm).max(1), &mut rng));
    keep.sort_unstable();
    OneClassSplit {
        test: split.test.subset(&keep),
        test_anomalous: keep.iter().map(|&i| split.test_anomalous[i]).collect(),
        ..split.clone()
    }
}

/// A labelled set for tracking AUROC during training: the validation normals
/// plus `n_anomalies` images of other classes drawn from the training split.
pub fn monitor_set(
    train_pool: &LabeledImages,
    normal_class: usize,
    normals: &[ImageTensor],
    n_anomalies: usize,
    seed: u64,
) -> Result<(Vec<ImageTensor>, Vec<bool>)> {
    let others: Vec<usize> = (0..train_pool.len()).filter(|&i| train_pool.labels[i] != normal_class).collect();
    if others.len() < n_anomalies || normals.is_empty() {
        bail!(Data, "monitor set needs {n_anomalies} anomalies and at least one normal");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = others.choose_multiple(&mut rng, n_anomalies).copied().collect();
    picked.sort_unstable();
    let mut images = normals.to_vec();
    let mut labels = vec![false; normals.len()];
    images.extend(picked.iter().map(|&i| train_pool.images[i].clone()));
    labels.extend(std::iter::repeat_n(true, picked.len()));
    Ok((images, labels))
}

/// Per-seed AUROCs of a repeated protocol with their mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedResult {
    pub seeds: Vec<u64>,
    pub aurocs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Runs `run` on a fresh protocol-1 split for every seed.
pub fn repeat_protocol1<F>(pool: &LabeledImages, normal_class: usize, val_fraction: f64, seeds: &[u64], mut run: F) -> Result<RepeatedResult>
where
    F: FnMut(&OneClassSplit, u64) -> Result<f64>,
{
    let mut aurocs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        aurocs.push(run(&protocol1_split(pool, normal_class, val_fraction, seed)?, seed)?);
    }
    let (mean, std) = mean_std(&aurocs);
    Ok(RepeatedResult { seeds: seeds.to_vec(), aurocs, mean, std })
}
