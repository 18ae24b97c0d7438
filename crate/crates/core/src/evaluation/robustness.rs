use std::fmt;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{per_sample_l2, reconstruction_objective_grad, signed_ascent, AttackConfig};
use crate::error::{bail, Error, Result};
use crate::models::Reconstructor;
use crate::puzzle::{permute_tensor, stack_images, unstack_images, GridPermutation, ImageTensor};
use crate::scoring::{score_images, Aggregation, NormalizerTable};

use super::metrics::{EvalReport, LabeledScores};

/// Epsilons of the default robustness sweep.
pub const DEFAULT_ATTACK_EPSILONS: [f64; 3] = [0.05, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackVariant {
    /// FGSM on the un-puzzled image against the averaged normalised score.
    Attack1,
    /// FGSM on each puzzle, undone by the inverse permutation and averaged.
    Attack2,
}

impl fmt::Display for AttackVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackVariant::Attack1 => "attack1",
            AttackVariant::Attack2 => "attack2",
        })
    }
}

impl std::str::FromStr for AttackVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attack1" => Ok(AttackVariant::Attack1),
            "attack2" => Ok(AttackVariant::Attack2),
            _ => bail!(Config, "unknown attack variant {s:?}; expected attack1 or attack2"),
        }
    }
}

/// Gradient of `Σ_b mean_k ‖U(P_k(x_b)) − x_b‖₂ / n_k` with respect to `x`,
/// accumulated one permutation at a time to bound memory.
fn avg_score_grad<M: Reconstructor + ?Sized>(
    model: &M,
    x: &Tensor,
    perms: &[GridPermutation],
    normalizers: &NormalizerTable,
) -> Result<Tensor> {
    let k = perms.len() as f64;
    let mut total = x.zeros_like()?;
    for (perm, n) in perms.iter().zip(normalizers.values()) {
        let input = Var::from_tensor(&x.detach())?;
        let out = model.reconstruct(&permute_tensor(input.as_tensor(), perm)?)?;
        let objective = (per_sample_l2(&out, input.as_tensor())?.sum_all()? / (n * k))?;
        let grads = objective.backward()?;
        if let Some(g) = grads.get(input.as_tensor()) {
            total = (total + g)?;
        }
    }
    Ok(total)
}

/// Perturbs a `[B, C, H, W]` batch of normal images within the ε-ball.
/// `cfg.epsilon == 0` returns the batch unchanged.
pub fn attack_batch<M, R>(
    model: &M,
    x: &Tensor,
    variant: AttackVariant,
    cfg: &AttackConfig,
    perms: &[GridPermutation],
    normalizers: &NormalizerTable,
    rng: &mut R,
) -> Result<Tensor>
where
    M: Reconstructor + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if !cfg.is_active() {
        return Ok(x.clone());
    }
    if perms.len() != normalizers.len() {
        bail!(Shape, "{} permutations but {} normalizers", perms.len(), normalizers.len());
    }
    match variant {
        AttackVariant::Attack1 => {
            signed_ascent(x, cfg, rng, |z| avg_score_grad(model, z, perms, normalizers))
        }
        AttackVariant::Attack2 => {
            let mut acc = x.zeros_like()?.to_dtype(DType::F64)?;
            for perm in perms {
                let puzzled = permute_tensor(x, perm)?;
                let attacked = signed_ascent(&puzzled, cfg, rng, |z| {
                    Ok(reconstruction_objective_grad(model, z, x)?.1)
                })?;
                acc = (acc + permute_tensor(&attacked, &perm.inverse())?.to_dtype(DType::F64)?)?;
            }
            let mean = (acc / perms.len() as f64)?;
            // the mean of ε-bounded points is ε-bounded up to rounding; clamp it back
            let lo = (x.to_dtype(DType::F64)? - cfg.epsilon)?.clamp(0.0, 1.0)?;
            let hi = (x.to_dtype(DType::F64)? + cfg.epsilon)?.clamp(0.0, 1.0)?;
            let out = mean.maximum(&lo)?.minimum(&hi)?.to_dtype(x.dtype())?;
            Ok(clip_to_ball(&out, x, cfg.epsilon)?)
        }
    }
}

/// Pulls f32 values that rounding pushed just outside the ball back inside.
fn clip_to_ball(out: &Tensor, x: &Tensor, eps: f64) -> Result<Tensor> {
    if out.dtype() != DType::F32 {
        return Ok(out.clone());
    }
    let o: Vec<f32> = out.flatten_all()?.to_vec1()?;
    let xs: Vec<f32> = x.flatten_all()?.to_vec1()?;
    let fixed: Vec<f32> = o
        .into_iter()
        .zip(xs)
        .map(|(mut v, xi)| {
            while (f64::from(v) - f64::from(xi)).abs() > eps {
                v = if v > xi { f32::from_bits(v.to_bits() - 1) } else { f32::from_bits(v.to_bits() + 1) };
            }
            v
        })
        .collect();
    Ok(Tensor::from_vec(fixed, out.shape(), out.device())?)
}

/// [`attack_batch`] over a list of images, `batch_size` at a time.
#[allow(clippy::too_many_arguments)]
pub fn attack_normal<M, R>(
    model: &M,
    images: &[ImageTensor],
    variant: AttackVariant,
    cfg: &AttackConfig,
    perms: &[GridPermutation],
    normalizers: &NormalizerTable,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<ImageTensor>>
where
    M: Reconstructor + ?Sized,
    R: Rng + ?Sized,
{
    if !cfg.is_active() {
        cfg.validate()?;
        return Ok(images.to_vec());
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let x = stack_images(chunk, model.dtype(), &Device::Cpu)?;
        out.extend(unstack_images(&attack_batch(model, &x, variant, cfg, perms, normalizers, rng)?)?);
    }
    Ok(out)
}

/// AUROC with the normal test images attacked, for one ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub variant: AttackVariant,
    pub epsilon: f64,
    pub report: EvalReport,
}

/// AUROC per ε with the normal test images replaced by their attacked
/// versions. Anomalies are left untouched. The ε = 0 row reuses the clean
/// scores, so it equals clean scoring with the same batch size.
#[allow(clippy::too_many_arguments)]
pub fn attack_sweep<M, R>(
    model: &M,
    test: &[ImageTensor],
    anomalous: &[bool],
    variant: AttackVariant,
    epsilons: &[f64],
    base: &AttackConfig,
    perms: &[GridPermutation],
    normalizers: &NormalizerTable,
    aggregation: Aggregation,
    tpr_points: &[f64],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<AttackRow>>
where
    M: Reconstructor + ?Sized,
    R: Rng + ?Sized,
{
    if test.len() != anomalous.len() {
        bail!(Shape, "{} test images but {} labels", test.len(), anomalous.len());
    }
    let normal_idx: Vec<usize> = (0..test.len()).filter(|&i| !anomalous[i]).collect();
    let normals: Vec<ImageTensor> = normal_idx.iter().map(|&i| test[i].clone()).collect();
    // anomalies are never attacked, so their rows come from one clean pass
    let clean = score_images(model, test, perms, normalizers, batch_size)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let cfg = AttackConfig { epsilon: eps, alpha: if eps > 0.0 { eps } else { base.alpha }, ..base.clone() };
        let mut table = clean.clone();
        if cfg.is_active() {
            let attacked = attack_normal(model, &normals, variant, &cfg, perms, normalizers, batch_size, rng)?;
            let scored = score_images(model, &attacked, perms, normalizers, batch_size)?;
            for (&i, row) in normal_idx.iter().zip(scored.rows) {
                table.rows[i] = row;
            }
        } else {
            cfg.validate()?;
        }
        let ls = LabeledScores::new(table.aggregates(aggregation), anomalous.to_vec())?;
        rows.push(AttackRow { variant, epsilon: eps, report: EvalReport::from_scores(&ls, aggregation, tpr_points)? });
        log::info!("{variant} eps {eps}: auroc {:.4}", rows.last().map_or(0.0, |r| r.report.auroc));
    }
    Ok(rows)
}
