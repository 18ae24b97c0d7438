//! Turns a [`RunConfig`] into the images a run trains, validates and is
//! tested on.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{load_dataset, to_grayscale, Dataset, LabeledImages};
use crate::error::{bail, Result};
use crate::evaluation::{monitor_set, pooled, split_for, subsample_split, subsample_test, zoom_augment, OneClassSplit};
use crate::puzzle::ImageTensor;

/// Data of one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub class_names: Vec<String>,
    pub normal_class: usize,
    pub split: OneClassSplit,
    /// Validation normals plus other-class training images, for per-epoch AUROC.
    pub monitor: Option<(Vec<ImageTensor>, Vec<bool>)>,
}

/// Finds a class by folder name, or by position when `name` is an index.
pub fn resolve_class(names: &[String], name: &str) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == name) {
        return Ok(i);
    }
    match name.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => bail!(Config, "unknown class {name:?}; known classes: {}", names.join(", ")),
    }
}

/// Loads the dataset named by `cfg.data` and applies [`prepare_dataset`].
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    prepare_dataset(cfg, load_dataset(&cfg.data)?)
}

/// Builds the split of a loaded dataset. Order of operations: optional
/// grayscale, protocol split, `fraction` subsample, `train_limit` cap,
/// monitor set, zoom augmentation, `test_limit` cap. Every random choice is
/// seeded by the run seed.
pub fn prepare_dataset(cfg: &RunConfig, mut ds: Dataset) -> Result<Prepared> {
    let e = &cfg.experiment;
    if e.grayscale {
        ds.train = ds.train.map_images(|img| Ok(to_grayscale(img)))?;
        ds.test = ds.test.map_images(|img| Ok(to_grayscale(img)))?;
    }
    let class_names = if ds.train.class_names.is_empty() { ds.test.class_names.clone() } else { ds.train.class_names.clone() };
    let normal_class = resolve_class(&class_names, &e.normal_class)?;
    let mut split = split_for(e.protocol, &ds, normal_class, e.val_fraction, cfg.seed)?;
    if e.fraction < 1.0 {
        split = subsample_split(&split, e.fraction, cfg.train.batch_size, cfg.seed)?;
    }
    if let Some(limit) = e.train_limit {
        if split.train.len() > limit {
            let mut idx: Vec<usize> = (0..split.train.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            idx.truncate(limit);
            idx.sort_unstable();
            split.train = split.train.subset(&idx);
        }
    }
    let monitor = match e.monitor_size {
        Some(n) if n > 0 => {
            if split.val.is_empty() {
                bail!(Config, "monitor_size needs a validation split");
            }
            let normals: Vec<ImageTensor> = split.val.images.iter().take(n).cloned().collect();
            let pool = without_test(&pooled(&ds), &split.test);
            Some(monitor_set(&pool, normal_class, &normals, n, cfg.seed)?)
        }
        _ => None,
    };
    if let Some(target) = e.zoom_target {
        let n = split.train.len();
        let images = zoom_augment(&split.train.images, target, cfg.seed)?;
        let extra = images.len() - n;
        split.train.images = images;
        split.train.labels.extend(std::iter::repeat_n(normal_class, extra));
        split.train.ids.extend((0..extra).map(|k| format!("zoom/{k}")));
    }
    if let Some(limit) = e.test_limit {
        split = subsample_test(&split, limit, cfg.seed);
    }
    Ok(Prepared { class_names, normal_class, split, monitor })
}

fn without_test(pool: &LabeledImages, test: &LabeledImages) -> LabeledImages {
    let test_ids: std::collections::HashSet<&str> = test.ids.iter().map(String::as_str).collect();
    let keep: Vec<usize> = (0..pool.len()).filter(|&i| !test_ids.contains(pool.ids[i].as_str())).collect();
    pool.subset(&keep)
}
