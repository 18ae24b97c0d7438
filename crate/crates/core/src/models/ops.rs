//! Activation and pooling with exact gradients.
//!
//! The stock max-pool backward mis-scales the gradient and the stock ReLU
//! backward lets gradient through at exactly zero, which matters on images
//! with large constant backgrounds. Both are rebuilt here from a constant
//! mask so the gradient is the mask itself.

use candle_core::{DType, Tensor};

use crate::error::{bail, Result};

/// `max(x, 0)` with gradient `1[x > 0]`.
pub fn relu(x: &Tensor) -> Result<Tensor> {
    let mask = x.detach().gt(0.0)?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// 2x2 stride-2 max pooling of a `[B, C, H, W]` tensor. The gradient of each
/// window goes to its first maximum in row-major order.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        bail!(Shape, "max_pool2x2 needs even sides, got {h}x{w}");
    }
    let values: Vec<f64> = x.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let mut mask = vec![0.0f64; values.len()];
    for plane in 0..b * c {
        let base = plane * h * w;
        for i in (0..h).step_by(2) {
            for j in (0..w).step_by(2) {
                let cells = [base + i * w + j, base + i * w + j + 1, base + (i + 1) * w + j, base + (i + 1) * w + j + 1];
                let mut best = cells[0];
                for &k in &cells[1..] {
                    if values[k] > values[best] {
                        best = k;
                    }
                }
                mask[best] = 1.0;
            }
        }
    }
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    let picked = (x * mask)?.reshape((b, c, h / 2, 2, w / 2, 2))?;
    Ok(picked.sum(5)?.sum(3)?)
}
