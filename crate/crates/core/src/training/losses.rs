use candle_core::Tensor;

use crate::adversarial::per_sample_l2;
use crate::error::{bail, Result};

/// Batch mean of `‖output_b − original_b‖₂`.
pub fn reconstruction_loss(output: &Tensor, original: &Tensor) -> Result<Tensor> {
    if output.dims() != original.dims() {
        bail!(Shape, "output {:?} vs original {:?}", output.dims(), original.dims());
    }
    Ok(per_sample_l2(output, original)?.mean_all()?)
}

/// Feature matching: batch mean of `‖f_real_b − mean_j f_fake_j‖₂`.
/// The real features are detached so only the generator side receives gradient.
pub fn adversarial_feature_loss(features_real: &Tensor, features_fake: &Tensor) -> Result<Tensor> {
    let (_, fr) = features_real.dims2()?;
    let (_, ff) = features_fake.dims2()?;
    if fr != ff {
        bail!(Shape, "real features have width {fr}, fake features {ff}");
    }
    let fake_mean = features_fake.mean_keepdim(0)?;
    let diff = features_real.detach().broadcast_sub(&fake_mean)?;
    Ok(diff.sqr()?.sum(1)?.sqrt()?.mean_all()?)
}

/// `loss_rec + λ·loss_adv`.
pub fn total_loss(loss_rec: &Tensor, loss_adv: &Tensor, lambda_adv: f64) -> Result<Tensor> {
    if lambda_adv == 0.0 {
        return Ok(loss_rec.clone());
    }
    Ok((loss_rec + (loss_adv * lambda_adv)?)?)
}

/// Mean binary cross-entropy of logits against a constant label, in the
/// overflow-free form `max(z, 0) − z·y + log(1 + e^{−|z|})`.
pub fn bce_with_logits(logits: &Tensor, label: f64) -> Result<Tensor> {
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let loss = ((logits.relu()? - (logits * label)?)? + softplus)?;
    Ok(loss.mean_all()?)
}

/// Real/fake cross-entropy averaged over both halves.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let n_real = real_logits.elem_count() as f64;
    let n_fake = fake_logits.elem_count() as f64;
    let real = (bce_with_logits(real_logits, 1.0)? * n_real)?;
    let fake = (bce_with_logits(fake_logits, 0.0)? * n_fake)?;
    Ok(((real + fake)? / (n_real + n_fake))?)
}
