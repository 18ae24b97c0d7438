use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::mask::{mask_partition, MaskMode};
use super::permutation::{apply_permutation, Grid, GridPermutation};
use crate::error::Result;

/// Record of the random choices behind one nine-part puzzle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NinePartMeta {
    /// The six shuffled cells, ascending.
    pub moved_cells: Vec<usize>,
    /// Full 3x3 mapping; the six moved cells form a derangement.
    pub mapping: Vec<usize>,
    /// The blacked cell, one of the three cells left in place.
    pub blacked_cell: usize,
}

/// Builds a 3x3 puzzle: six uniformly chosen cells are deranged among
/// themselves and one of the remaining three is blacked out.
pub fn make_nine_part_puzzle<R: Rng + ?Sized>(
    img: &ImageTensor,
    rng: &mut R,
) -> Result<(ImageTensor, NinePartMeta)> {
    let grid = Grid::THREE_BY_THREE;
    grid.cell_size(img.height(), img.width())?;

    let mut moved: Vec<usize> = sample(rng, 9, 6).into_vec();
    moved.sort_unstable();
    let shuffled = loop {
        let mut s = moved.clone();
        s.shuffle(rng);
        if s.iter().zip(&moved).all(|(a, b)| a != b) {
            break s;
        }
    };
    let mut mapping: Vec<usize> = (0..9).collect();
    for (dst, src) in moved.iter().zip(&shuffled) {
        mapping[*dst] = *src;
    }
    let fixed: Vec<usize> = (0..9).filter(|c| !moved.contains(c)).collect();
    let blacked_cell = fixed[rng.random_range(0..fixed.len())];

    let perm = GridPermutation::new(grid, mapping.clone())?;
    let masked = mask_partition(img, grid, blacked_cell, MaskMode::Inpaint)?;
    let out = apply_permutation(&masked, &perm)?;
    Ok((out, NinePartMeta { moved_cells: moved, mapping, blacked_cell }))
}
