//! Joint training of the reconstruction network and the discriminator.
//!
//! Every batch is turned into masked puzzles, hardened with a single FGSM step
//! and fed to the U-Net, which is updated on `L_rec + λ·L_adv`. The
//! discriminator then learns to tell original images from reconstructions.

mod losses;
mod scheduler;

use std::io::Write;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    adversarial_feature_loss, bce_with_logits, discriminator_loss, reconstruction_loss, total_loss,
};
pub use scheduler::PlateauScheduler;

use crate::adversarial::{fgsm_perturb, AttackConfig};
use crate::error::{bail, Result};
use crate::evaluation::{auroc, mean_std, LabeledScores};
use crate::models::{Discriminator, DiscriminatorConfig, ReconstructionNet, UNetConfig};
use crate::puzzle::{
    draw_training_puzzle, stack_images, GridPermutation, ImageTensor, PermutationSet, PuzzleConfig,
};
use crate::scoring::{
    compute_normalizers, raw_scores, Aggregation, NormalizerTable, ScoreTable, DEFAULT_SCORING_BATCH,
};

/// Network sizes. Channel count and image size follow from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub disc_base_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 64, disc_base_channels: 64 }
    }
}

impl ModelConfig {
    pub fn unet(&self, channels: usize, image_size: usize) -> UNetConfig {
        UNetConfig { channels, image_size, depth: self.depth, base_channels: self.base_channels }
    }

    pub fn discriminator(&self, channels: usize, image_size: usize) -> DiscriminatorConfig {
        DiscriminatorConfig { channels, image_size, base_channels: self.disc_base_channels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_unet: f64,
    pub lr_disc: f64,
    pub lambda_adv: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Epochs at the end of the run on which the monitor set is scored.
    pub eval_last_epochs: usize,
    pub seed: u64,
    pub attack: AttackConfig,
    pub puzzle: PuzzleConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_unet: 1e-3,
            lr_disc: 2e-4,
            lambda_adv: 1.0,
            weight_decay: 1e-5,
            batch_size: 128,
            epochs: 50,
            plateau_patience: 50,
            plateau_factor: 0.8,
            eval_last_epochs: 20,
            seed: 0,
            attack: AttackConfig::default(),
            puzzle: PuzzleConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Batch size 8 for 128 px images, 128 otherwise.
    pub fn default_batch_size(image_size: usize) -> usize {
        if image_size >= 128 {
            8
        } else {
            128
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_unet", self.lr_unet), ("lr_disc", self.lr_disc)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bail!(Config, "{name} must be positive, got {v}");
            }
        }
        for (name, v) in [("lambda_adv", self.lambda_adv), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                bail!(Config, "{name} must be >= 0, got {v}");
            }
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            bail!(Config, "plateau_factor must lie in (0, 1), got {}", self.plateau_factor);
        }
        if self.batch_size == 0 || self.epochs == 0 || self.plateau_patience == 0 {
            bail!(Config, "batch_size, epochs and plateau_patience must be at least 1");
        }
        if self.puzzle.canvas.0 != self.puzzle.canvas.1 {
            bail!(Config, "canvas must be square, got {:?}", self.puzzle.canvas);
        }
        self.attack.validate()
    }

    pub fn image_size(&self) -> usize {
        self.puzzle.canvas.0
    }
}

/// Aggregated AUROC of one epoch on the monitor set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateAurocs {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

impl AggregateAurocs {
    pub fn get(&self, agg: Aggregation) -> f64 {
        match agg {
            Aggregation::Min => self.min,
            Aggregation::Max => self.max,
            Aggregation::Avg => self.avg,
        }
    }

    pub fn from_table(table: &ScoreTable, anomalous: &[bool]) -> Result<Self> {
        let mut out = [0.0; 3];
        for (slot, agg) in out.iter_mut().zip(Aggregation::ALL) {
            *slot = auroc(&LabeledScores::new(table.aggregates(agg), anomalous.to_vec())?)?;
        }
        Ok(Self { min: out[0], max: out[1], avg: out[2] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss_rec: f64,
    pub loss_adv: f64,
    pub loss_total: f64,
    pub loss_disc: f64,
    pub lr: f64,
    /// Squared Frobenius norm of the U-Net parameters after the epoch.
    pub weight_sq_norm: f64,
    pub auroc: Option<AggregateAurocs>,
}

pub const METRICS_HEADER: &str =
    "epoch,loss_rec,loss_adv,loss_total,loss_disc,lr,weight_sq_norm,auroc_min,auroc_max,auroc_avg";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let au = |f: fn(&AggregateAurocs) -> f64| self.auroc.as_ref().map(|a| f(a).to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss_rec,
            self.loss_adv,
            self.loss_total,
            self.loss_disc,
            self.lr,
            self.weight_sq_norm,
            au(|a| a.min),
            au(|a| a.max),
            au(|a| a.avg)
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, records: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Labelled images scored at the end of the last epochs to track AUROC. The
/// normal images must be validation images: their mean scores normalise the
/// monitor scores.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub images: &'a [ImageTensor],
    pub anomalous: &'a [bool],
}

/// Mean and population standard deviation of the monitor AUROC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub epochs: usize,
    pub mean: AggregateAurocs,
    pub std: AggregateAurocs,
}

impl Stability {
    pub fn from_records(records: &[EpochRecord]) -> Option<Self> {
        let aurocs: Vec<AggregateAurocs> = records.iter().filter_map(|r| r.auroc).collect();
        if aurocs.is_empty() {
            return None;
        }
        let stat = |f: fn(&AggregateAurocs) -> f64| mean_std(&aurocs.iter().map(f).collect::<Vec<_>>());
        let (min, max, avg) = (stat(|a| a.min), stat(|a| a.max), stat(|a| a.avg));
        Some(Self {
            epochs: aurocs.len(),
            mean: AggregateAurocs { min: min.0, max: max.0, avg: avg.0 },
            std: AggregateAurocs { min: min.1, max: max.1, avg: avg.1 },
        })
    }
}

/// Both networks, their optimisers and the training random stream.
pub struct Trainer {
    cfg: TrainConfig,
    unet: ReconstructionNet,
    disc: Discriminator,
    opt_unet: AdamW,
    opt_disc: AdamW,
    scheduler: PlateauScheduler,
    perms: Vec<GridPermutation>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        cfg.puzzle.validate(channels)?;
        let size = cfg.image_size();
        let unet = ReconstructionNet::build(&cfg.model.unet(channels, size), DType::F32, cfg.seed)?;
        let disc = Discriminator::build(
            &cfg.model.discriminator(channels, size),
            DType::F32,
            cfg.seed.wrapping_add(1),
        )?;
        let adam = |lr: f64| ParamsAdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: cfg.weight_decay };
        let opt_unet = AdamW::new(unet.params().vars(), adam(cfg.lr_unet))?;
        let opt_disc = AdamW::new(disc.params().vars(), adam(cfg.lr_disc))?;
        let scheduler = PlateauScheduler::new(cfg.lr_unet, cfg.plateau_factor, cfg.plateau_patience);
        let perms = cfg.puzzle.permutations()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self { cfg, unet, disc, opt_unet, opt_disc, scheduler, perms, rng, epoch: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn unet(&self) -> &ReconstructionNet {
        &self.unet
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.disc
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn into_models(self) -> (ReconstructionNet, Discriminator) {
        (self.unet, self.disc)
    }

    fn uses_discriminator(&self) -> bool {
        self.cfg.lambda_adv > 0.0
    }

    /// One pass over `data` in a freshly shuffled order. Returns the mean
    /// batch losses; the learning-rate schedule is applied by [`fit`].
    pub fn train_epoch(&mut self, data: &[ImageTensor]) -> Result<EpochRecord> {
        if data.is_empty() {
            bail!(Data, "empty training set");
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut rec_sum, mut adv_sum, mut disc_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &data[i]).collect();
            let (rec, adv, disc) = self.train_batch(&images).map_err(|e| {
                crate::error::Error::Numeric(format!("epoch {} batch {b}: {e}", self.epoch))
            })?;
            rec_sum += rec;
            adv_sum += adv;
            disc_sum += disc;
            batches += 1;
        }
        let n = batches as f64;
        let (loss_rec, loss_adv) = (rec_sum / n, adv_sum / n);
        Ok(EpochRecord {
            epoch: self.epoch,
            loss_rec,
            loss_adv,
            loss_total: loss_rec + self.cfg.lambda_adv * loss_adv,
            loss_disc: disc_sum / n,
            lr: self.opt_unet.learning_rate(),
            weight_sq_norm: self.unet.params().squared_norm()?,
            auroc: None,
        })
    }

    /// Returns `(loss_rec, loss_adv, loss_disc)` measured before the updates.
    fn train_batch(&mut self, images: &[&ImageTensor]) -> Result<(f64, f64, f64)> {
        let mut puzzles = Vec::with_capacity(images.len());
        for img in images {
            puzzles.push(draw_training_puzzle(img, &self.cfg.puzzle, &self.perms, &mut self.rng)?.0);
        }
        let device = Device::Cpu;
        let original = stack_images(images.iter().copied(), DType::F32, &device)?;
        let puzzled = stack_images(&puzzles, DType::F32, &device)?;
        let attacked = fgsm_perturb(&self.unet, &puzzled, Some(&original), &self.cfg.attack, &mut self.rng)?;

        let output = self.unet.forward(&attacked)?;
        let loss_rec = reconstruction_loss(&output, &original)?;
        let rec = scalar(&loss_rec)?;
        let (loss_adv, adv) = if self.uses_discriminator() {
            let real = self.disc.forward(&original)?.features;
            let fake = self.disc.forward(&output)?.features;
            let l = adversarial_feature_loss(&real, &fake)?;
            let v = scalar(&l)?;
            (l, v)
        } else {
            (loss_rec.zeros_like()?, 0.0)
        };
        if !rec.is_finite() || !adv.is_finite() {
            bail!(Numeric, "non-finite loss (rec {rec}, adv {adv})");
        }
        let total = total_loss(&loss_rec, &loss_adv, self.cfg.lambda_adv)?;
        self.opt_unet.backward_step(&total)?;

        let disc = if self.uses_discriminator() {
            discriminator_step(&self.disc, &mut self.opt_disc, &original, &output.detach())?
        } else {
            0.0
        };
        Ok((rec, adv, disc))
    }

    /// Feeds the epoch total loss to the plateau scheduler and applies any
    /// reduction to both optimisers.
    pub fn schedule(&mut self, loss_total: f64) {
        let factor = self.scheduler.step(loss_total);
        if factor != 1.0 {
            self.opt_unet.set_learning_rate(self.opt_unet.learning_rate() * factor);
            self.opt_disc.set_learning_rate(self.opt_disc.learning_rate() * factor);
            log::info!("epoch {}: learning rate reduced to {}", self.epoch, self.opt_unet.learning_rate());
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.opt_unet.learning_rate()
    }
}

/// One optimiser step of the discriminator on real versus fake images.
/// Returns the loss before the step.
pub fn discriminator_step(disc: &Discriminator, opt: &mut AdamW, real: &Tensor, fake: &Tensor) -> Result<f64> {
    let real_logits = disc.forward(&real.detach())?.logits;
    let fake_logits = disc.forward(&fake.detach())?.logits;
    let loss = discriminator_loss(&real_logits, &fake_logits)?;
    let value = scalar(&loss)?;
    if !value.is_finite() {
        bail!(Numeric, "non-finite discriminator loss {value}");
    }
    opt.backward_step(&loss)?;
    Ok(value)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Everything a finished run produces.
pub struct FitOutput {
    pub unet: ReconstructionNet,
    pub discriminator: Discriminator,
    pub records: Vec<EpochRecord>,
    pub scoring: PermutationSet,
    pub normalizers: NormalizerTable,
    pub stability: Option<Stability>,
}

pub fn fit(
    cfg: &TrainConfig,
    train: &[ImageTensor],
    val: &[ImageTensor],
    monitor: Option<Monitor<'_>>,
) -> Result<FitOutput> {
    fit_with(cfg, train, val, monitor, |_, _| Ok(()))
}

/// Runs `cfg.epochs` epochs, calling `on_epoch` after each one (for logging
/// or intermediate checkpoints), then freezes the validation normalizers.
/// When `val` is empty the normalizers come from the training images.
pub fn fit_with<F>(
    cfg: &TrainConfig,
    train: &[ImageTensor],
    val: &[ImageTensor],
    monitor: Option<Monitor<'_>>,
    mut on_epoch: F,
) -> Result<FitOutput>
where
    F: FnMut(&Trainer, &EpochRecord) -> Result<()>,
{
    let Some(first) = train.first() else {
        bail!(Data, "empty training set");
    };
    let (channels, h, w) = first.shape();
    if (h, w) != cfg.puzzle.canvas {
        bail!(Shape, "training images are {h}x{w}, canvas is {:?}", cfg.puzzle.canvas);
    }
    if let Some(m) = &monitor {
        if m.images.len() != m.anomalous.len() {
            bail!(Shape, "{} monitor images but {} labels", m.images.len(), m.anomalous.len());
        }
    }
    let norm_source = if val.is_empty() {
        log::warn!("empty validation split, normalizers are computed on the training images");
        train
    } else {
        val
    };
    let scoring = cfg.puzzle.scoring_set(cfg.seed)?;
    let mut trainer = Trainer::new(cfg.clone(), channels)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut record = trainer.train_epoch(train)?;
        if let Some(m) = &monitor {
            if epoch + cfg.eval_last_epochs > cfg.epochs {
                // the monitor normals are validation images, so they also provide the normalizers
                let raw = raw_scores(trainer.unet(), m.images, &scoring.perms, DEFAULT_SCORING_BATCH)?;
                let normal_rows: Vec<Vec<f64>> =
                    raw.iter().zip(m.anomalous).filter(|(_, a)| !**a).map(|(r, _)| r.clone()).collect();
                let norms = NormalizerTable::from_raw(&normal_rows)?;
                record.auroc = Some(AggregateAurocs::from_table(&ScoreTable::from_raw(raw, &norms)?, m.anomalous)?);
            }
        }
        trainer.schedule(record.loss_total);
        log::info!(
            "epoch {epoch}: rec {:.4} adv {:.4} disc {:.4} lr {:.2e}{}",
            record.loss_rec,
            record.loss_adv,
            record.loss_disc,
            record.lr,
            record.auroc.map(|a| format!(" auroc(max) {:.4}", a.max)).unwrap_or_default()
        );
        on_epoch(&trainer, &record)?;
        records.push(record);
    }
    let normalizers = compute_normalizers(trainer.unet(), norm_source, &scoring.perms, DEFAULT_SCORING_BATCH)?;
    let stability = Stability::from_records(&records);
    let (unet, discriminator) = trainer.into_models();
    Ok(FitOutput { unet, discriminator, records, scoring, normalizers, stability })
}
