use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{bail, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw `u8` images from an IDX3 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => bail!(Data, "truncated IDX header"),
    }
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        bail!(Data, "bad IDX image magic number {magic:#010x}, expected {IMAGE_MAGIC:#010x}");
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let want = count * rows * cols;
    let body = &bytes[16..];
    if body.len() != want {
        bail!(Data, "IDX image body has {} bytes, header implies {want}", body.len());
    }
    Ok(IdxImages { count, rows, cols, pixels: body.to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        bail!(Data, "bad IDX label magic number {magic:#010x}, expected {LABEL_MAGIC:#010x}");
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        bail!(Data, "IDX label body has {} bytes, header implies {count}", body.len());
    }
    Ok(body.to_vec())
}

/// Reads `path`, or `path.gz` when only the compressed file exists.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let gz = PathBuf::from(format!("{}.gz", path.display()));
    let mut out = Vec::new();
    if path.exists() {
        if path.extension().is_some_and(|e| e == "gz") {
            GzDecoder::new(File::open(path)?).read_to_end(&mut out)?;
        } else {
            File::open(path)?.read_to_end(&mut out)?;
        }
    } else if gz.exists() {
        GzDecoder::new(File::open(&gz)?).read_to_end(&mut out)?;
    } else {
        bail!(Data, "neither {} nor {} exists", path.display(), gz.display());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn parses_images_and_labels() {
        let bytes = encode_images(2, 1, 2, &[0, 255, 7, 8]);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (2, 1, 2));
        assert_eq!(imgs.image(1), &[7, 8]);

        let mut labels = LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 9]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2, 9]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = encode_images(2, 1, 2, &[0, 255, 7]);
        assert!(parse_idx_images(&bytes).is_err());
        assert!(parse_idx_labels(&encode_images(1, 1, 1, &[0])).is_err());
        assert!(parse_idx_images(&[0, 0, 8]).is_err());
    }
}
