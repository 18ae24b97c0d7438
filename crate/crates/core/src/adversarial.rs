//! Signed-gradient perturbations inside an ∞-norm ball.
//!
//! The procedure starts from a uniform random offset in `[-ε, ε]`, takes
//! `steps` signed gradient ascent steps of size `α` on a differentiable
//! objective, projects back onto the ε-ball after every step and finally clips
//! the image into `[0, 1]`. One step is FGSM with random start, more steps are
//! PGD. The default objective is the reconstruction error of the puzzled input.

use std::fmt;

use candle_core::{DType, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::models::Reconstructor;

/// What the reconstruction objective compares the network output against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    /// The puzzled input itself.
    #[default]
    Puzzled,
    /// The un-puzzled original image.
    Original,
}

impl fmt::Display for AttackTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackTarget::Puzzled => "puzzled",
            AttackTarget::Original => "original",
        })
    }
}

impl std::str::FromStr for AttackTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "puzzled" => Ok(AttackTarget::Puzzled),
            "original" => Ok(AttackTarget::Original),
            _ => bail!(Config, "unknown attack target {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Radius of the ∞-norm ball on the `[0, 1]` pixel scale.
    pub epsilon: f64,
    /// Step size.
    pub alpha: f64,
    /// 1 for FGSM, more for PGD.
    pub steps: usize,
    pub seed: u64,
    pub target: AttackTarget,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, alpha: 0.05, steps: 1, seed: 0, target: AttackTarget::Puzzled }
    }
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self { epsilon, alpha: epsilon, ..Self::default() }
    }

    /// A zero radius disables the attack; the step-size rule only applies to
    /// an active single-step attack.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            bail!(Config, "epsilon must be a finite value >= 0, got {}", self.epsilon);
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            bail!(Config, "alpha must be positive, got {}", self.alpha);
        }
        if self.steps == 0 {
            bail!(Config, "steps must be at least 1");
        }
        if self.steps == 1 && self.epsilon > 0.0 && self.alpha > self.epsilon {
            bail!(
                Config,
                "single-step attack needs alpha <= epsilon ({} > {})",
                self.alpha,
                self.epsilon
            );
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.epsilon > 0.0
    }
}

/// `Σ_b ‖U(z_b) − target_b‖₂` and its gradient with respect to `z`.
pub fn reconstruction_objective_grad<M: Reconstructor + ?Sized>(
    model: &M,
    z: &Tensor,
    target: &Tensor,
) -> Result<(f64, Tensor)> {
    let input = Var::from_tensor(&z.detach())?;
    let out = model.reconstruct(input.as_tensor())?;
    if out.dims() != target.dims() {
        bail!(Shape, "reconstruction {:?} vs target {:?}", out.dims(), target.dims());
    }
    let objective = per_sample_l2(&out, &target.detach())?.sum_all()?;
    let value = objective.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let grads = objective.backward()?;
    let grad = grads
        .get(input.as_tensor())
        .cloned()
        .unwrap_or(input.as_tensor().zeros_like()?);
    Ok((value, grad))
}

/// `[B]` Euclidean norms of `a − b` over all non-batch dimensions.
pub fn per_sample_l2(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.flatten_from(1)?.sum(1)?.sqrt()?)
}

/// Random-start signed ascent on the objective whose input gradient is
/// returned by `grad_fn`. The result is within `ε` of `x` in every pixel and
/// inside `[0, 1]`.
pub fn signed_ascent<R, F>(x: &Tensor, cfg: &AttackConfig, rng: &mut R, mut grad_fn: F) -> Result<Tensor>
where
    R: Rng + ?Sized,
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    cfg.validate()?;
    if !cfg.is_active() {
        return Ok(x.clone());
    }
    let dtype = x.dtype();
    let shape = x.shape().clone();
    let base: Vec<f64> = x.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let eps = cfg.epsilon;
    let mut delta: Vec<f64> = (0..base.len()).map(|_| rng.random_range(-eps..=eps)).collect();
    let compose = |delta: &[f64]| -> Result<Tensor> {
        let v: Vec<f64> = base.iter().zip(delta).map(|(b, d)| (b + d).clamp(0.0, 1.0)).collect();
        Ok(Tensor::from_vec(v, &shape, x.device())?.to_dtype(dtype)?)
    };
    for step in 0..cfg.steps {
        let probe = compose(&delta)?;
        let grad: Vec<f64> = grad_fn(&probe)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        if grad.len() != delta.len() {
            bail!(Shape, "gradient has {} entries, input has {}", grad.len(), delta.len());
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            bail!(
                Numeric,
                "non-finite input gradient {} at flat index {bad} on attack step {step}",
                grad[bad]
            );
        }
        for (d, g) in delta.iter_mut().zip(&grad) {
            let s = if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 };
            *d = (*d + cfg.alpha * s).clamp(-eps, eps);
        }
    }
    if dtype == DType::F32 {
        // f32 rounding of x + δ may overshoot the ball by an ulp
        let xs: Vec<f32> = x.flatten_all()?.to_vec1()?;
        let out: Vec<f32> = xs
            .iter()
            .zip(&delta)
            .map(|(xi, d)| {
                let mut o = ((f64::from(*xi) + d).clamp(0.0, 1.0)) as f32;
                while (f64::from(o) - f64::from(*xi)).abs() > eps {
                    o = step_toward(o, *xi);
                }
                o
            })
            .collect();
        return Ok(Tensor::from_vec(out, &shape, x.device())?);
    }
    compose(&delta)
}

fn step_toward(from: f32, to: f32) -> f32 {
    if from == to {
        return from;
    }
    let bits = from.to_bits();
    // values here are non-negative, so bit order matches numeric order
    if from < to {
        f32::from_bits(bits + 1)
    } else {
        f32::from_bits(bits - 1)
    }
}

fn perturb_with<M, R>(model: &M, puzzled: &Tensor, target: Option<&Tensor>, cfg: &AttackConfig, rng: &mut R) -> Result<Tensor>
where
    M: Reconstructor + ?Sized,
    R: Rng + ?Sized,
{
    let target = match (cfg.target, target) {
        (AttackTarget::Original, Some(t)) => t.clone(),
        (AttackTarget::Original, None) => bail!(Config, "attack target 'original' needs the original images"),
        (AttackTarget::Puzzled, _) => puzzled.clone(),
    };
    signed_ascent(puzzled, cfg, rng, |z| Ok(reconstruction_objective_grad(model, z, &target)?.1))
}

/// Single-step attack on a `[B, C, H, W]` batch of puzzles. `original` is only
/// read when the config targets the original images.
pub fn fgsm_perturb<M, R>(
    model: &M,
    puzzled: &Tensor,
    original: Option<&Tensor>,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Tensor>
where
    M: Reconstructor + ?Sized,
    R: Rng + ?Sized,
{
    let single = AttackConfig { steps: 1, ..cfg.clone() };
    perturb_with(model, puzzled, original, &single, rng)
}

/// Multi-step projected attack; identical to [`fgsm_perturb`] when `steps == 1`.
pub fn pgd_perturb<M, R>(
    model: &M,
    puzzled: &Tensor,
    original: Option<&Tensor>,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Tensor>
where
    M: Reconstructor + ?Sized,
    R: Rng + ?Sized,
{
    perturb_with(model, puzzled, original, cfg, rng)
}

#[cfg(test)]
mod tests {
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::{IdentityReconstructor, ReconstructionNet, UNetConfig};

    fn tiny_net(dtype: DType) -> ReconstructionNet {
        let cfg = UNetConfig { channels: 1, image_size: 8, depth: 1, base_channels: 4 };
        ReconstructionNet::build(&cfg, dtype, 4).unwrap()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        let a: Vec<f64> = a.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = b.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let net = tiny_net(DType::F32);
        let x = Tensor::rand(0f32, 1.0, (3, 1, 8, 8), &Device::Cpu).unwrap();
        let cfg = AttackConfig { epsilon: 0.0, ..AttackConfig::default() };
        let out = fgsm_perturb(&net, &x, None, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(max_abs_diff(&out, &x), 0.0);
    }

    #[test]
    fn stays_inside_ball_and_range() {
        let net = tiny_net(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..20 {
            let eps = 0.01 * (i + 1) as f64;
            let x = Tensor::rand(0f32, 1.0, (2, 1, 8, 8), &Device::Cpu).unwrap();
            let cfg = AttackConfig { epsilon: eps, alpha: eps, steps: 1 + i % 3, ..Default::default() };
            let out = pgd_perturb(&net, &x, None, &cfg, &mut rng).unwrap();
            assert!(max_abs_diff(&out, &x) <= eps);
            let v: Vec<f32> = out.flatten_all().unwrap().to_vec1().unwrap();
            assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn pgd_single_step_equals_fgsm() {
        let net = tiny_net(DType::F32);
        let x = Tensor::rand(0f32, 1.0, (2, 1, 8, 8), &Device::Cpu).unwrap();
        let cfg = AttackConfig { epsilon: 0.1, alpha: 0.05, steps: 1, ..Default::default() };
        let a = fgsm_perturb(&net, &x, None, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = pgd_perturb(&net, &x, None, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(max_abs_diff(&a, &b), 0.0);
    }

    #[test]
    fn same_rng_same_output() {
        let net = tiny_net(DType::F32);
        let x = Tensor::rand(0f32, 1.0, (2, 1, 8, 8), &Device::Cpu).unwrap();
        let cfg = AttackConfig { steps: 3, alpha: 0.02, ..Default::default() };
        let a = pgd_perturb(&net, &x, None, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = pgd_perturb(&net, &x, None, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(max_abs_diff(&a, &b), 0.0);
    }

    #[test]
    fn original_target_requires_original() {
        let net = tiny_net(DType::F32);
        let x = Tensor::rand(0f32, 1.0, (1, 1, 8, 8), &Device::Cpu).unwrap();
        let cfg = AttackConfig { target: AttackTarget::Original, ..Default::default() };
        assert!(fgsm_perturb(&net, &x, None, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(fgsm_perturb(&net, &x, Some(&x), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn identity_model_gradient_points_away_from_target() {
        // ‖z − t‖ grows fastest along sign(z − t)
        let z = Tensor::new(&[[[[0.6f64, 0.2]]]], &Device::Cpu).unwrap();
        let t = Tensor::new(&[[[[0.5f64, 0.5]]]], &Device::Cpu).unwrap();
        let (value, grad) = reconstruction_objective_grad(&IdentityReconstructor, &z, &t).unwrap();
        assert!((value - (0.01f64 + 0.09).sqrt()).abs() < 1e-12);
        let g: Vec<f64> = grad.flatten_all().unwrap().to_vec1().unwrap();
        assert!(g[0] > 0.0 && g[1] < 0.0);
    }

    #[test]
    fn config_rules() {
        assert!(AttackConfig::default().validate().is_ok());
        assert!(AttackConfig { alpha: 0.1, epsilon: 0.05, ..Default::default() }.validate().is_err());
        assert!(AttackConfig { alpha: 0.1, epsilon: 0.05, steps: 3, ..Default::default() }.validate().is_ok());
        assert!(AttackConfig { epsilon: 0.0, ..Default::default() }.validate().is_ok());
        assert!(AttackConfig { epsilon: -1.0, ..Default::default() }.validate().is_err());
        assert!(AttackConfig { steps: 0, ..Default::default() }.validate().is_err());
    }
}
