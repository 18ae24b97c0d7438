//! Network definitions. Parameters are initialised from a seeded generator so
//! that two builds with the same seed are bit-identical.

mod discriminator;
mod ops;
mod params;
mod unet;

use candle_core::{DType, Tensor};

pub use ops::{max_pool2x2, relu};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorOutput};
pub use params::{Init, ParamStore, INIT_STD};
pub use unet::{ReconstructionNet, UNetConfig, OUTPUT_BIAS_INIT};

use crate::error::Result;

/// Anything that maps a `[B, C, H, W]` batch of puzzles to reconstructions of
/// the same shape. Implementations must be differentiable with respect to the
/// input for adversarial perturbation to work.
pub trait Reconstructor {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor>;

    fn dtype(&self) -> DType {
        DType::F32
    }
}

/// Returns its input unchanged. Handy as a reference model.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}
