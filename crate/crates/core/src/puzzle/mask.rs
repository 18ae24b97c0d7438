use std::fmt;

use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::permutation::Grid;
use crate::error::{bail, Error, Result};

/// ITU-R BT.601 luma weights for R, G, B.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Auxiliary corruption applied to one cell before shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    None,
    /// Black out the cell.
    Inpaint,
    /// Replace the cell's colour with its luma.
    Colorize,
}

impl MaskMode {
    /// Inpainting for grayscale data, colorization for colour data.
    pub fn for_channels(channels: usize) -> Self {
        if channels == 3 {
            MaskMode::Colorize
        } else {
            MaskMode::Inpaint
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::None => "none",
            MaskMode::Inpaint => "inpaint",
            MaskMode::Colorize => "colorize",
        })
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MaskMode::None),
            "inpaint" => Ok(MaskMode::Inpaint),
            "colorize" => Ok(MaskMode::Colorize),
            _ => bail!(Config, "unknown mask mode {s:?}"),
        }
    }
}

/// Blacks out or desaturates one grid cell; all other cells are untouched.
pub fn mask_partition(img: &ImageTensor, grid: Grid, cell: usize, mode: MaskMode) -> Result<ImageTensor> {
    if cell >= grid.cells() {
        bail!(Config, "cell {cell} out of range for grid {grid}");
    }
    let (ch, cw) = grid.cell_size(img.height(), img.width())?;
    if mode == MaskMode::Colorize && img.channels() != 3 {
        bail!(Mask, "colorize needs a 3-channel image, got {} channel(s)", img.channels());
    }
    let mut out = img.clone();
    let (y0, x0) = (cell / grid.cols * ch, cell % grid.cols * cw);
    match mode {
        MaskMode::None => {}
        MaskMode::Inpaint => {
            for c in 0..img.channels() {
                for y in y0..y0 + ch {
                    for x in x0..x0 + cw {
                        out.set(c, y, x, 0.0);
                    }
                }
            }
        }
        MaskMode::Colorize => {
            for y in y0..y0 + ch {
                for x in x0..x0 + cw {
                    let g = luma(img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
                    for c in 0..3 {
                        out.set(c, y, x, g);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn luma(r: f32, g: f32, b: f32) -> f32 {
    (LUMA[0] * r + LUMA[1] * g + LUMA[2] * b).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_cells() -> ImageTensor {
        // 3x4x4, top-left cell pure red, the rest a mix
        let mut data = vec![0.0; 48];
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let v = if y < 2 && x < 2 {
                        if c == 0 { 1.0 } else { 0.0 }
                    } else {
                        ((c + y * 4 + x) % 7) as f32 / 7.0
                    };
                    data[(c * 4 + y) * 4 + x] = v;
                }
            }
        }
        ImageTensor::new(3, 4, 4, data).unwrap()
    }

    #[test]
    fn none_is_noop() {
        let img = rgb_cells();
        assert_eq!(mask_partition(&img, Grid::TWO_BY_TWO, 2, MaskMode::None).unwrap(), img);
    }

    #[test]
    fn inpaint_zeroes_only_the_cell() {
        let img = rgb_cells();
        let out = mask_partition(&img, Grid::TWO_BY_TWO, 3, MaskMode::Inpaint).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    if y >= 2 && x >= 2 {
                        assert_eq!(out.get(c, y, x), 0.0);
                    } else {
                        assert_eq!(out.get(c, y, x), img.get(c, y, x));
                    }
                }
            }
        }
        let black = ImageTensor::zeros(1, 4, 4).unwrap();
        assert_eq!(mask_partition(&black, Grid::TWO_BY_TWO, 1, MaskMode::Inpaint).unwrap(), black);
        assert_eq!(mask_partition(&out, Grid::TWO_BY_TWO, 3, MaskMode::Inpaint).unwrap(), out);
    }

    #[test]
    fn colorize_red_cell_gives_luma() {
        let img = rgb_cells();
        let out = mask_partition(&img, Grid::TWO_BY_TWO, 0, MaskMode::Colorize).unwrap();
        let expected = 0.299f32 * 1.0 + 0.587 * 0.0 + 0.114 * 0.0;
        for c in 0..3 {
            assert_eq!(out.get(c, 0, 0), expected);
            assert_eq!(out.get(c, 1, 1), expected);
            assert_eq!(out.get(c, 3, 3), img.get(c, 3, 3));
        }
        let twice = mask_partition(&out, Grid::TWO_BY_TWO, 0, MaskMode::Colorize).unwrap();
        for (a, b) in twice.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn colorize_rejects_grayscale() {
        let img = ImageTensor::zeros(1, 4, 4).unwrap();
        assert!(matches!(
            mask_partition(&img, Grid::TWO_BY_TWO, 0, MaskMode::Colorize),
            Err(Error::Mask(_))
        ));
        assert!(mask_partition(&img, Grid::TWO_BY_TWO, 4, MaskMode::Inpaint).is_err());
    }
}
