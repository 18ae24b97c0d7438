//! Grid puzzles: permutations of image cells with optional masking of one cell.
//!
//! Cells are numbered row-major from zero, and a [`GridPermutation`] is
//! destination-indexed: `mapping[d]` names the source cell shown at `d`. The
//! puzzle set is listed in lexicographic order of the mappings so that
//! permutation indices are stable across runs.

mod image;
mod mask;
mod nine_part;
mod permutation;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use image::{stack_images, unstack_images, ImageTensor};
pub use mask::{mask_partition, MaskMode, LUMA};
pub(crate) use mask::luma;
pub use nine_part::{make_nine_part_puzzle, NinePartMeta};
pub use permutation::{
    apply_permutation, enumerate_permutations, invert_permutation, permute_tensor, Grid,
    GridPermutation, PermMode, PermutationSet,
};

use crate::error::{bail, Result};

/// Defines the pretext task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuzzleConfig {
    pub grid: Grid,
    pub perm_mode: PermMode,
    pub mask_mode: MaskMode,
    /// Canvas `(height, width)` in pixels.
    pub canvas: (usize, usize),
    /// Number of permutations scored per test image when the full set is too
    /// large to enumerate at test time (nine-part puzzles). `None` scores all.
    #[serde(default)]
    pub scoring_subset: Option<usize>,
}

impl Default for PuzzleConfig {
    fn default() -> Self {
        Self {
            grid: Grid::TWO_BY_TWO,
            perm_mode: PermMode::AtLeastTwo,
            mask_mode: MaskMode::Inpaint,
            canvas: (32, 32),
            scoring_subset: None,
        }
    }
}

/// Scored permutations for nine-part puzzles when no subset size is given.
pub const DEFAULT_NINE_PART_SCORING: usize = 32;

impl PuzzleConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        let (h, w) = self.canvas;
        self.grid.cell_size(h, w)?;
        if self.mask_mode == MaskMode::Colorize && channels != 3 {
            bail!(Config, "mask mode colorize needs 3-channel images, data has {channels}");
        }
        match (self.grid, self.perm_mode) {
            (Grid::TWO_BY_TWO, PermMode::AtLeastTwo | PermMode::ExactlyTwo) => {}
            (Grid::THREE_BY_THREE, PermMode::ExactlyTwo | PermMode::NinePart) => {}
            (g, m) => bail!(Config, "permutation mode {m} is not supported on a {g} grid"),
        }
        if self.scoring_subset == Some(0) {
            bail!(Config, "scoring_subset must be positive");
        }
        Ok(())
    }

    /// The full training puzzle set.
    pub fn permutations(&self) -> Result<Vec<GridPermutation>> {
        enumerate_permutations(self.grid, self.perm_mode)
    }

    /// The permutations evaluated for every test image. This is the full set
    /// unless a subset is configured (or implied by the nine-part mode), in
    /// which case a seeded sample is kept in lexicographic order.
    pub fn scoring_set(&self, seed: u64) -> Result<PermutationSet> {
        let all = self.permutations()?;
        let want = match (self.scoring_subset, self.perm_mode) {
            (Some(n), _) => Some(n),
            (None, PermMode::NinePart) => Some(DEFAULT_NINE_PART_SCORING),
            (None, _) => None,
        };
        let perms = match want {
            Some(n) if n < all.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample(&mut rng, all.len(), n).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| all[i].clone()).collect()
            }
            _ => all,
        };
        PermutationSet::new(perms)
    }
}

/// Masks `masked_cell` (if any) and then shuffles the cells with `perm`.
/// Without a masked cell this is a pure permutation, as used at test time.
pub fn make_puzzle(
    img: &ImageTensor,
    perm: &GridPermutation,
    masked_cell: Option<usize>,
    mask_mode: MaskMode,
) -> Result<ImageTensor> {
    match masked_cell {
        Some(cell) if mask_mode != MaskMode::None => {
            apply_permutation(&mask_partition(img, perm.grid(), cell, mask_mode)?, perm)
        }
        _ => apply_permutation(img, perm),
    }
}

/// Draws one training puzzle: a uniformly chosen permutation from `perms` and,
/// when masking is enabled, a uniformly chosen masked cell. Nine-part mode
/// samples its own derangement and always blacks one unmoved cell.
pub fn draw_training_puzzle<R: Rng + ?Sized>(
    img: &ImageTensor,
    cfg: &PuzzleConfig,
    perms: &[GridPermutation],
    rng: &mut R,
) -> Result<(ImageTensor, GridPermutation)> {
    if cfg.perm_mode == PermMode::NinePart {
        let (out, meta) = make_nine_part_puzzle(img, rng)?;
        return Ok((out, GridPermutation::new(Grid::THREE_BY_THREE, meta.mapping)?));
    }
    if perms.is_empty() {
        bail!(Config, "empty permutation set");
    }
    let perm = &perms[rng.random_range(0..perms.len())];
    let cell = (cfg.mask_mode != MaskMode::None).then(|| rng.random_range(0..cfg.grid.cells()));
    Ok((make_puzzle(img, perm, cell, cfg.mask_mode)?, perm.clone()))
}
