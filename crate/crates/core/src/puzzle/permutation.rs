use std::fmt;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::image::ImageTensor;
use crate::error::{bail, Error, Result};

/// Grid geometry in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub const TWO_BY_TWO: Grid = Grid { rows: 2, cols: 2 };
    pub const THREE_BY_THREE: Grid = Grid { rows: 3, cols: 3 };

    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        let g = Grid { rows, cols };
        if g != Self::TWO_BY_TWO && g != Self::THREE_BY_THREE {
            bail!(Config, "unsupported grid {rows}x{cols}; expected 2x2 or 3x3");
        }
        Ok(g)
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Pixel size of one cell, failing when the image does not divide evenly.
    pub fn cell_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height % self.rows != 0 || width % self.cols != 0 {
            bail!(
                Shape,
                "image {height}x{width} is not divisible by grid {}x{}",
                self.rows,
                self.cols
            );
        }
        Ok((height / self.rows, width / self.cols))
    }

    fn from_cell_count(n: usize) -> Result<Self> {
        match n {
            4 => Ok(Self::TWO_BY_TWO),
            9 => Ok(Self::THREE_BY_THREE),
            _ => bail!(Config, "mapping of length {n} does not describe a 2x2 or 3x3 grid"),
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid must look like 2x2, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid dimension {v:?}")))
        };
        Grid::new(parse(r)?, parse(c)?)
    }
}

/// Which permutations form the puzzle set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermMode {
    /// Every non-identity permutation (23 for a 2x2 grid).
    AtLeastTwo,
    /// Only transpositions (6 for a 2x2 grid), for texture-like data.
    ExactlyTwo,
    /// 3x3 grid where six cells are deranged and the other three stay put.
    NinePart,
}

impl PermMode {
    fn accepts(self, displaced: usize) -> bool {
        match self {
            PermMode::AtLeastTwo => displaced >= 2,
            PermMode::ExactlyTwo => displaced == 2,
            PermMode::NinePart => displaced == 6,
        }
    }
}

impl fmt::Display for PermMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PermMode::AtLeastTwo => "at_least_two",
            PermMode::ExactlyTwo => "exactly_two",
            PermMode::NinePart => "nine_part",
        })
    }
}

impl std::str::FromStr for PermMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "at_least_two" => Ok(PermMode::AtLeastTwo),
            "exactly_two" => Ok(PermMode::ExactlyTwo),
            "nine_part" => Ok(PermMode::NinePart),
            _ => bail!(Config, "unknown permutation mode {s:?}"),
        }
    }
}

/// A bijection on grid cells. `mapping[d]` is the source cell shown at
/// destination `d`; cells are numbered row-major from zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridPermutation {
    grid: Grid,
    mapping: Vec<usize>,
    displacement_count: usize,
}

impl GridPermutation {
    pub fn new(grid: Grid, mapping: Vec<usize>) -> Result<Self> {
        let n = grid.cells();
        if mapping.len() != n {
            bail!(Config, "mapping has {} entries, grid {grid} has {n} cells", mapping.len());
        }
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n || seen[m] {
                bail!(Config, "mapping {mapping:?} is not a bijection on 0..{n}");
            }
            seen[m] = true;
        }
        let displacement_count = mapping.iter().enumerate().filter(|(i, m)| *i != **m).count();
        Ok(Self { grid, mapping, displacement_count })
    }

    pub fn identity(grid: Grid) -> Self {
        Self { grid, mapping: (0..grid.cells()).collect(), displacement_count: 0 }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn displacement_count(&self) -> usize {
        self.displacement_count
    }

    pub fn is_identity(&self) -> bool {
        self.displacement_count == 0
    }

    /// The permutation undoing this one.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (d, &s) in self.mapping.iter().enumerate() {
            inv[s] = d;
        }
        Self { grid: self.grid, mapping: inv, displacement_count: self.displacement_count }
    }

    /// `self.then(other)` applies `self` first and `other` second.
    pub fn then(&self, other: &GridPermutation) -> Result<Self> {
        if self.grid != other.grid {
            bail!(Config, "cannot compose permutations on grids {} and {}", self.grid, other.grid);
        }
        // out[d] = in[other[d]] after mid[d] = in[self[d]], so out[d] = in[self[other[d]]]
        let mapping = other.mapping.iter().map(|&d| self.mapping[d]).collect();
        Self::new(self.grid, mapping)
    }
}

/// Returns the inverse permutation.
pub fn invert_permutation(perm: &GridPermutation) -> GridPermutation {
    perm.inverse()
}

/// Lists every permutation of the grid admitted by `mode`, in lexicographic
/// order of the mapping. The identity is never included.
pub fn enumerate_permutations(grid: Grid, mode: PermMode) -> Result<Vec<GridPermutation>> {
    match (grid.rows, grid.cols, mode) {
        (2, 2, PermMode::AtLeastTwo | PermMode::ExactlyTwo) => {}
        (3, 3, PermMode::ExactlyTwo | PermMode::NinePart) => {}
        _ => bail!(Config, "permutation mode {mode} is not supported on a {grid} grid"),
    }
    let mut current: Vec<usize> = (0..grid.cells()).collect();
    let mut out = Vec::new();
    loop {
        let displaced = current.iter().enumerate().filter(|(i, m)| *i != **m).count();
        if mode.accepts(displaced) {
            out.push(GridPermutation { grid, mapping: current.clone(), displacement_count: displaced });
        }
        if !next_lexicographic(&mut current) {
            break;
        }
    }
    Ok(out)
}

fn next_lexicographic(v: &mut [usize]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).expect("pivot has a successor");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Moves grid cells so that destination `d` holds source cell `mapping[d]`.
pub fn apply_permutation(img: &ImageTensor, perm: &GridPermutation) -> Result<ImageTensor> {
    let grid = perm.grid();
    let (ch, cw) = grid.cell_size(img.height(), img.width())?;
    let mut out = img.clone();
    for (dst, &src) in perm.mapping().iter().enumerate() {
        if dst == src {
            continue;
        }
        let (dy, dx) = (dst / grid.cols * ch, dst % grid.cols * cw);
        let (sy, sx) = (src / grid.cols * ch, src % grid.cols * cw);
        for c in 0..img.channels() {
            for y in 0..ch {
                let from = img.index(c, sy + y, sx);
                let to = img.index(c, dy + y, dx);
                out.data_mut()[to..to + cw].copy_from_slice(&img.data()[from..from + cw]);
            }
        }
    }
    Ok(out)
}

/// Differentiable version of [`apply_permutation`] over a `[B, C, H, W]` batch.
pub fn permute_tensor(t: &Tensor, perm: &GridPermutation) -> Result<Tensor> {
    let (_, _, h, w) = t.dims4()?;
    let grid = perm.grid();
    let (ch, cw) = grid.cell_size(h, w)?;
    let cell = |idx: usize| -> Result<Tensor> {
        let (r, c) = (idx / grid.cols, idx % grid.cols);
        Ok(t.narrow(2, r * ch, ch)?.narrow(3, c * cw, cw)?)
    };
    let mut rows = Vec::with_capacity(grid.rows);
    for r in 0..grid.rows {
        let cells = (0..grid.cols)
            .map(|c| cell(perm.mapping()[r * grid.cols + c]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Tensor::cat(&cells, 3)?);
    }
    Ok(Tensor::cat(&rows, 2)?)
}

/// An ordered puzzle set, serialised as a JSON array of mappings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    pub grid: Grid,
    pub perms: Vec<GridPermutation>,
}

impl PermutationSet {
    pub fn new(perms: Vec<GridPermutation>) -> Result<Self> {
        let Some(first) = perms.first() else {
            bail!(Config, "empty permutation set");
        };
        let grid = first.grid();
        if perms.iter().any(|p| p.grid() != grid) {
            bail!(Config, "permutation set mixes grids");
        }
        Ok(Self { grid, perms })
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn mappings(&self) -> Vec<Vec<usize>> {
        self.perms.iter().map(|p| p.mapping().to_vec()).collect()
    }

    pub fn from_mappings(mappings: Vec<Vec<usize>>) -> Result<Self> {
        let perms = mappings
            .into_iter()
            .map(|m| GridPermutation::new(Grid::from_cell_count(m.len())?, m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(perms)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.mappings()).expect("integer arrays serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_mappings(serde_json::from_str(s)?)
    }

    /// Hex SHA-256 of the JSON form; recorded in run manifests.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

impl Serialize for PermutationSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.mappings().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PermutationSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Vec::<Vec<usize>>::deserialize(d)?;
        Self::from_mappings(m).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_count(n: usize, pred: impl Fn(usize) -> bool) -> usize {
        // Heap's algorithm, independent of the lexicographic walker above.
        fn heap(k: usize, a: &mut Vec<usize>, acc: &mut Vec<Vec<usize>>) {
            if k == 1 {
                acc.push(a.clone());
                return;
            }
            heap(k - 1, a, acc);
            for i in 0..k - 1 {
                if k % 2 == 0 {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
                heap(k - 1, a, acc);
            }
        }
        let mut all = Vec::new();
        heap(n, &mut (0..n).collect(), &mut all);
        all.iter()
            .filter(|p| pred(p.iter().enumerate().filter(|(i, m)| *i != **m).count()))
            .count()
    }

    #[test]
    fn two_by_two_cardinalities() {
        let full = enumerate_permutations(Grid::TWO_BY_TWO, PermMode::AtLeastTwo).unwrap();
        assert_eq!(full.len(), 23);
        assert_eq!(full.len(), brute_force_count(4, |d| d >= 2));
        assert!(full.iter().all(|p| !p.is_identity()));
        assert!(!full.iter().any(|p| p.mapping() == [0, 1, 2, 3]));

        let texture = enumerate_permutations(Grid::TWO_BY_TWO, PermMode::ExactlyTwo).unwrap();
        assert_eq!(texture.len(), 6);
        assert_eq!(texture.len(), brute_force_count(4, |d| d == 2));
        assert!(texture.iter().all(|p| p.displacement_count() == 2));
        assert!(texture.iter().all(|p| p.inverse() == *p));
    }

    #[test]
    fn lexicographic_order() {
        let full = enumerate_permutations(Grid::TWO_BY_TWO, PermMode::AtLeastTwo).unwrap();
        assert!(full.windows(2).all(|w| w[0].mapping() < w[1].mapping()));
        assert_eq!(full[0].mapping(), [0, 1, 3, 2]);
        assert_eq!(full[22].mapping(), [3, 2, 1, 0]);
    }

    #[test]
    fn nine_part_set() {
        let set = enumerate_permutations(Grid::THREE_BY_THREE, PermMode::NinePart).unwrap();
        // C(9, 6) subsets times D(6) = 265 derangements
        assert_eq!(set.len(), 84 * 265);
        assert_eq!(set.len(), brute_force_count(9, |d| d == 6));
        let swaps = enumerate_permutations(Grid::THREE_BY_THREE, PermMode::ExactlyTwo).unwrap();
        assert_eq!(swaps.len(), 36);
    }

    #[test]
    fn unsupported_combinations() {
        assert!(enumerate_permutations(Grid::TWO_BY_TWO, PermMode::NinePart).is_err());
        assert!(enumerate_permutations(Grid::THREE_BY_THREE, PermMode::AtLeastTwo).is_err());
        assert!(Grid::new(4, 4).is_err());
        assert!("2x3".parse::<Grid>().is_err());
        assert_eq!("3x3".parse::<Grid>().unwrap(), Grid::THREE_BY_THREE);
    }

    #[test]
    fn inverse_examples() {
        let g = Grid::TWO_BY_TWO;
        let id = GridPermutation::identity(g);
        assert_eq!(invert_permutation(&id), id);
        let t = GridPermutation::new(g, vec![1, 0, 2, 3]).unwrap();
        assert_eq!(invert_permutation(&t), t);
        let cyc = GridPermutation::new(g, vec![1, 2, 0, 3]).unwrap();
        let inv = invert_permutation(&cyc);
        assert_eq!(inv.mapping(), [2, 0, 1, 3]);
        for i in 0..4 {
            assert_eq!(inv.mapping()[cyc.mapping()[i]], i);
        }
        assert!(cyc.then(&inv).unwrap().is_identity());
        assert!(inv.then(&cyc).unwrap().is_identity());
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(GridPermutation::new(Grid::TWO_BY_TWO, vec![0, 0, 1, 2]).is_err());
        assert!(GridPermutation::new(Grid::TWO_BY_TWO, vec![0, 1, 2]).is_err());
        assert!(GridPermutation::new(Grid::TWO_BY_TWO, vec![0, 1, 2, 4]).is_err());
    }

    fn constant_cells() -> ImageTensor {
        let mut data = vec![0.0; 16];
        for y in 0..4 {
            for x in 0..4 {
                let cell = (y / 2) * 2 + x / 2;
                data[y * 4 + x] = cell as f32 * 0.25;
            }
        }
        ImageTensor::new(1, 4, 4, data).unwrap()
    }

    fn reference_apply(img: &ImageTensor, perm: &GridPermutation) -> ImageTensor {
        let g = perm.grid();
        let (ch, cw) = (img.height() / g.rows, img.width() / g.cols);
        let mut out = vec![0.0; img.data().len()];
        for c in 0..img.channels() {
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let dst = (y / ch) * g.cols + x / cw;
                    let src = perm.mapping()[dst];
                    let sy = (src / g.cols) * ch + y % ch;
                    let sx = (src % g.cols) * cw + x % cw;
                    out[img.index(c, y, x)] = img.get(c, sy, sx);
                }
            }
        }
        ImageTensor::new(img.channels(), img.height(), img.width(), out).unwrap()
    }

    #[test]
    fn apply_constant_cell_example() {
        let img = constant_cells();
        let p = GridPermutation::new(Grid::TWO_BY_TWO, vec![1, 0, 3, 2]).unwrap();
        let out = apply_permutation(&img, &p).unwrap();
        assert_eq!(out, reference_apply(&img, &p));
        assert_eq!(out.get(0, 0, 0), 0.25);
        assert_eq!(out.get(0, 0, 2), 0.0);
        assert_eq!(out.get(0, 2, 0), 0.75);
        assert_eq!(out.get(0, 2, 2), 0.5);
    }

    #[test]
    fn apply_identity_and_inverse() {
        let img = constant_cells();
        let id = GridPermutation::identity(Grid::TWO_BY_TWO);
        assert_eq!(apply_permutation(&img, &id).unwrap(), img);
        for p in enumerate_permutations(Grid::TWO_BY_TWO, PermMode::AtLeastTwo).unwrap() {
            let there = apply_permutation(&img, &p).unwrap();
            assert_eq!(there, reference_apply(&img, &p));
            assert_eq!(apply_permutation(&there, &p.inverse()).unwrap(), img);
        }
    }

    #[test]
    fn apply_rejects_indivisible() {
        let img = ImageTensor::zeros(1, 5, 4).unwrap();
        let p = GridPermutation::identity(Grid::TWO_BY_TWO);
        assert!(matches!(apply_permutation(&img, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn tensor_permutation_matches_image_permutation() {
        use candle_core::{DType, Device};
        let img = constant_cells();
        for p in enumerate_permutations(Grid::TWO_BY_TWO, PermMode::AtLeastTwo).unwrap() {
            let t = img.to_tensor(DType::F32, &Device::Cpu).unwrap();
            let got = ImageTensor::from_batch_tensor(&permute_tensor(&t, &p).unwrap(), 0).unwrap();
            assert_eq!(got, apply_permutation(&img, &p).unwrap());
        }
    }

    #[test]
    fn json_roundtrip_and_digest() {
        let set = PermutationSet::new(
            enumerate_permutations(Grid::TWO_BY_TWO, PermMode::ExactlyTwo).unwrap(),
        )
        .unwrap();
        let json = set.to_json();
        assert!(json.starts_with("[[0,1,3,2],"));
        assert_eq!(PermutationSet::from_json(&json).unwrap(), set);
        assert_eq!(set.digest().len(), 64);
        assert!(PermutationSet::from_json("[[0,1,2]]").is_err());
    }
}
