//! Dataset loading into canvas-sized [`ImageTensor`]s.
//!
//! Two layouts are understood:
//!
//! * `idx_pair`: `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
//!   `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte` in the root, each
//!   optionally gzip-compressed with a `.gz` suffix.
//! * `image_folder`: `root/<class>/*.png|jpg`. When `root/train` and
//!   `root/test` both exist they are read as predefined splits, otherwise
//!   every image lands in the training split.

mod idx;
mod transform;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use idx::{parse_idx_images, parse_idx_labels, read_maybe_gz, IdxImages};
pub use transform::{
    fit_to_canvas, pad_to_canvas, resize_bilinear, to_grayscale, to_rgb, with_channels, CanvasFit,
};

use crate::error::{bail, Error, Result};
use crate::puzzle::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    ImageFolder,
    IdxPair,
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::ImageFolder => "image_folder",
            DatasetFormat::IdxPair => "idx_pair",
        })
    }
}

/// Where class labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    FolderName,
    LabelFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub format: DatasetFormat,
    pub channels: usize,
    pub canvas: (usize, usize),
    #[serde(default)]
    pub fit: CanvasFit,
    /// Defaults to the only rule the format supports.
    #[serde(default)]
    pub labeling: Option<Labeling>,
}

impl DatasetSpec {
    /// Standard MNIST files padded from 28 to a 32 px canvas.
    pub fn mnist(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            format: DatasetFormat::IdxPair,
            channels: 1,
            canvas: (32, 32),
            fit: CanvasFit::Pad,
            labeling: None,
        }
    }

    pub fn labeling(&self) -> Labeling {
        self.labeling.unwrap_or(match self.format {
            DatasetFormat::ImageFolder => Labeling::FolderName,
            DatasetFormat::IdxPair => Labeling::LabelFile,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            bail!(Config, "dataset channels must be 1 or 3, got {}", self.channels);
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            bail!(Config, "empty canvas {:?}", self.canvas);
        }
        match (self.format, self.labeling()) {
            (DatasetFormat::ImageFolder, Labeling::FolderName) | (DatasetFormat::IdxPair, Labeling::LabelFile) => Ok(()),
            (f, l) => bail!(Config, "format {f} cannot use {l:?} labelling"),
        }
    }
}

/// Images with integer class labels, class names and stable sample ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledImages {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub class_names: Vec<String>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Positions of every sample of `class`, in storage order.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledImages {
        LabeledImages {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Applies an image transform, keeping labels and ids.
    pub fn map_images<F>(&self, f: F) -> Result<LabeledImages>
    where
        F: Fn(&ImageTensor) -> Result<ImageTensor>,
    {
        Ok(LabeledImages {
            images: self.images.iter().map(f).collect::<Result<_>>()?,
            labels: self.labels.clone(),
            ids: self.ids.clone(),
            class_names: self.class_names.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: LabeledImages,
    /// Empty for image folders without predefined splits.
    pub test: LabeledImages,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    if !spec.root.exists() {
        bail!(Data, "dataset root {} does not exist", spec.root.display());
    }
    match spec.format {
        DatasetFormat::IdxPair => Ok(Dataset {
            train: load_idx_split(spec, "train")?,
            test: load_idx_split(spec, "t10k")?,
        }),
        DatasetFormat::ImageFolder => {
            let (train_dir, test_dir) = (spec.root.join("train"), spec.root.join("test"));
            if train_dir.is_dir() && test_dir.is_dir() {
                let train = load_image_folder(spec, &train_dir, "train", None)?;
                let test = load_image_folder(spec, &test_dir, "test", Some(&train.class_names))?;
                Ok(Dataset { train, test })
            } else {
                let train = load_image_folder(spec, &spec.root, "all", None)?;
                let test = LabeledImages { class_names: train.class_names.clone(), ..LabeledImages::default() };
                Ok(Dataset { train, test })
            }
        }
    }
}

fn load_idx_split(spec: &DatasetSpec, prefix: &str) -> Result<LabeledImages> {
    let images = parse_idx_images(&read_maybe_gz(&spec.root.join(format!("{prefix}-images-idx3-ubyte")))?)?;
    let labels = parse_idx_labels(&read_maybe_gz(&spec.root.join(format!("{prefix}-labels-idx1-ubyte")))?)?;
    if labels.len() != images.count {
        bail!(Data, "{prefix}: {} images but {} labels", images.count, labels.len());
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    let mut out = LabeledImages {
        class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        ..LabeledImages::default()
    };
    for (i, &label) in labels.iter().enumerate().take(images.count) {
        let data = images.image(i).iter().map(|&p| f32::from(p) / 255.0).collect();
        let img = ImageTensor::new(1, images.rows, images.cols, data)?;
        out.images.push(prepare(&img, spec)?);
        out.labels.push(label as usize);
        out.ids.push(format!("{prefix}/{i}"));
    }
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Reads `dir/<class>/*`. Class order is lexicographic; `classes` pins the
/// order to that of another split.
fn load_image_folder(spec: &DatasetSpec, dir: &Path, split: &str, classes: Option<&[String]>) -> Result<LabeledImages> {
    let mut by_class: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.is_file() && is_image(p));
        files.sort();
        if files.is_empty() {
            bail!(Data, "class folder {} contains no images", path.display());
        }
        by_class.insert(name, files);
    }
    if by_class.is_empty() {
        bail!(Data, "no class folders under {}", dir.display());
    }
    let mut class_names: Vec<String> = classes.map(<[String]>::to_vec).unwrap_or_default();
    let mut out = LabeledImages::default();
    for (name, files) in &by_class {
        let label = match class_names.iter().position(|n| n == name) {
            Some(l) => l,
            None => {
                class_names.push(name.clone());
                class_names.len() - 1
            }
        };
        for file in files {
            let img = decode_image(file)?;
            out.images.push(prepare(&img, spec)?);
            out.labels.push(label);
            let stem = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            out.ids.push(format!("{split}/{name}/{stem}"));
        }
    }
    out.class_names = class_names;
    Ok(out)
}

/// Decodes a PNG or JPEG into an RGB (or grayscale, for 1-channel files)
/// image in `[0, 1]`.
pub fn decode_image(path: &Path) -> Result<ImageTensor> {
    let dynamic = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if dynamic.color().channel_count() <= 2 {
        let luma = dynamic.to_luma8();
        let data = luma.as_raw().iter().map(|&p| f32::from(p) / 255.0).collect();
        return ImageTensor::new(1, h, w, data);
    }
    let rgb = dynamic.to_rgb8();
    let raw = rgb.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = f32::from(px[c]) / 255.0;
        }
    }
    ImageTensor::new(3, h, w, data)
}

fn prepare(img: &ImageTensor, spec: &DatasetSpec) -> Result<ImageTensor> {
    fit_to_canvas(&with_channels(img, spec.channels)?, spec.canvas, spec.fit)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write_png(path: &Path, rgb: [u8; 3], side: u32) {
        let img = image::RgbImage::from_pixel(side, side, image::Rgb(rgb));
        img.save(path).unwrap();
    }

    #[test]
    fn single_image_folder() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("good")).unwrap();
        write_png(&dir.path().join("good/a.png"), [255, 0, 0], 10);
        let spec = DatasetSpec {
            root: dir.path().to_path_buf(),
            format: DatasetFormat::ImageFolder,
            channels: 1,
            canvas: (16, 16),
            fit: CanvasFit::Resize,
            labeling: None,
        };
        let ds = load_dataset(&spec).unwrap();
        assert_eq!(ds.train.len(), 1);
        assert!(ds.test.is_empty());
        assert_eq!(ds.train.images[0].shape(), (1, 16, 16));
        assert!((ds.train.images[0].get(0, 8, 8) - 0.299).abs() < 1e-6);
        assert_eq!(load_dataset(&spec).unwrap(), ds);
    }

    #[test]
    fn split_folders_share_class_order() {
        let dir = tempfile::tempdir().unwrap();
        for (split, class) in [("train", "good"), ("test", "good"), ("test", "crack")] {
            std::fs::create_dir_all(dir.path().join(split).join(class)).unwrap();
            write_png(&dir.path().join(split).join(class).join("x.png"), [10, 200, 30], 4);
        }
        let spec = DatasetSpec {
            root: dir.path().to_path_buf(),
            format: DatasetFormat::ImageFolder,
            channels: 3,
            canvas: (4, 4),
            fit: CanvasFit::Pad,
            labeling: None,
        };
        let ds = load_dataset(&spec).unwrap();
        assert_eq!(ds.train.class_names, vec!["good"]);
        assert_eq!(ds.test.class_names, vec!["good", "crack"]);
        assert_eq!(ds.test.labels, vec![1, 0]);
    }

    #[test]
    fn empty_class_folder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("empty")).unwrap();
        let spec = DatasetSpec {
            root: dir.path().to_path_buf(),
            format: DatasetFormat::ImageFolder,
            channels: 1,
            canvas: (4, 4),
            fit: CanvasFit::Pad,
            labeling: None,
        };
        assert!(load_dataset(&spec).is_err());
    }

    #[test]
    fn idx_pair_with_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, bytes: &[u8]| {
            let f = std::fs::File::create(dir.path().join(format!("{name}.gz"))).unwrap();
            let mut gz = flate2::write::GzEncoder::new(f, flate2::Compression::default());
            gz.write_all(bytes).unwrap();
            gz.finish().unwrap();
        };
        let header = |magic: u32, dims: &[u32]| {
            let mut v = magic.to_be_bytes().to_vec();
            for d in dims {
                v.extend_from_slice(&d.to_be_bytes());
            }
            v
        };
        for prefix in ["train", "t10k"] {
            let mut imgs = header(0x803, &[2, 2, 2]);
            imgs.extend_from_slice(&[0, 255, 255, 0, 51, 51, 51, 51]);
            write(&format!("{prefix}-images-idx3-ubyte"), &imgs);
            let mut labels = header(0x801, &[2]);
            labels.extend_from_slice(&[3, 7]);
            write(&format!("{prefix}-labels-idx1-ubyte"), &labels);
        }
        let spec = DatasetSpec { canvas: (4, 4), ..DatasetSpec::mnist(dir.path()) };
        let ds = load_dataset(&spec).unwrap();
        assert_eq!(ds.train.labels, vec![3, 7]);
        assert_eq!(ds.test.ids, vec!["t10k/0", "t10k/1"]);
        let first = &ds.train.images[0];
        assert_eq!((first.get(0, 1, 1), first.get(0, 1, 2), first.get(0, 0, 0)), (0.0, 1.0, 0.0));
        assert!((ds.train.images[1].get(0, 1, 1) - 0.2).abs() < 1e-6);
    }

    #[test]
    fn spec_validation() {
        let mut spec = DatasetSpec::mnist("/nonexistent");
        assert!(spec.validate().is_ok());
        spec.labeling = Some(Labeling::FolderName);
        assert!(spec.validate().is_err());
        spec.labeling = None;
        spec.channels = 2;
        assert!(spec.validate().is_err());
        assert!(load_dataset(&DatasetSpec::mnist("/nonexistent")).is_err());
    }
}
