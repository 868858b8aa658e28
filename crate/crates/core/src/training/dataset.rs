//! Image-folder datasets: `<root>/<class>/<image>`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "ppm", "pnm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    /// Sorted class directory names; the position is the label.
    pub classes: Vec<String>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub fractions: [f64; 3],
    /// Files with an image extension that could not be decoded.
    pub skipped: usize,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `(floor(f_train * m), floor(f_val * m), remainder)`.
pub fn split_counts(m: usize, fractions: [f64; 3]) -> (usize, usize, usize) {
    // the nudge keeps products such as 0.6 * 1000 from flooring to 599
    let floor = |f: f64| ((f * m as f64) + 1e-9).floor() as usize;
    let train = floor(fractions[0]).min(m);
    let val = floor(fractions[1]).min(m - train);
    (train, val, m - train - val)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Indexes `root`, shuffling each class's sorted file list with `seed` before splitting.
pub fn load_dataset(root: &Path, fractions: [f64; 3], seed: u64) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Data(format!("data root {} is not a directory", root.display())));
    }
    let read = |dir: &Path| fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot list {}: {e}", dir.display())));
    let mut classes: Vec<String> = read(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::Data(format!("data root {} has no class directories", root.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = DatasetIndex {
        classes: classes.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        fractions,
        skipped: 0,
    };
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        let mut candidates: Vec<PathBuf> =
            read(&dir)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file() && has_image_extension(p)).collect();
        candidates.sort();
        let readable: Vec<bool> = candidates.par_iter().map(|p| image::image_dimensions(p).is_ok()).collect();
        index.skipped += readable.iter().filter(|ok| !**ok).count();
        let mut files: Vec<PathBuf> =
            candidates.into_iter().zip(readable).filter(|(_, ok)| *ok).map(|(p, _)| p).collect();
        if files.is_empty() {
            return Err(Error::EmptyClass(class.clone()));
        }
        files.shuffle(&mut rng);
        let (n_train, n_val, _) = split_counts(files.len(), fractions);
        for (i, path) in files.into_iter().enumerate() {
            let sample = Sample { path, label };
            if i < n_train {
                index.train.push(sample);
            } else if i < n_train + n_val {
                index.val.push(sample);
            } else {
                index.test.push(sample);
            }
        }
    }
    Ok(index)
}

/// Per-channel standardization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Side length the shorter image side is resized to before the centre crop.
pub fn resize_target(resolution: usize) -> usize {
    (resolution as f64 * 8.0 / 7.0).round() as usize
}

/// Dimensions after resizing the shorter side of `w x h` to `target`.
pub fn shorter_side_dims(w: u32, h: u32, target: u32) -> (u32, u32) {
    if w <= h {
        (target, ((h as f64 * target as f64 / w as f64).round() as u32).max(target))
    } else {
        (((w as f64 * target as f64 / h as f64).round() as u32).max(target), target)
    }
}

/// Resizes the shorter side and centre-crops to `resolution`; an image already
/// at `resolution x resolution` is returned unchanged.
pub fn resize_and_crop(img: &RgbImage, resolution: usize) -> RgbImage {
    let r = resolution as u32;
    if img.width() == r && img.height() == r {
        return img.clone();
    }
    let (w, h) = shorter_side_dims(img.width(), img.height(), resize_target(resolution) as u32);
    let resized = imageops::resize(img, w, h, FilterType::Triangle);
    imageops::crop_imm(&resized, (w - r) / 2, (h - r) / 2, r, r).to_image()
}

/// Standardized `[3, R, R]` tensor of an RGB image that is already `R x R`.
pub fn to_tensor(img: &RgbImage, norm: &Normalization, flip: bool) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    Tensor::from_fn([3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let sx = if flip { w - 1 - x } else { x };
        let v = img.get_pixel(sx as u32, y as u32)[c] as f64 / 255.0;
        ((v - norm.mean[c]) / norm.std[c]) as f32
    })
}

pub fn decode(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(img.to_rgb8())
}

pub fn preprocess(path: &Path, resolution: usize, norm: &Normalization) -> Result<Tensor<f32>> {
    let img = decode(path)?;
    Ok(to_tensor(&resize_and_crop(&img, resolution), norm, false))
}

/// A split decoded into memory, one `[3, R, R]` tensor per sample.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl LoadedSplit {
    /// Decodes every sample in parallel; output order follows `samples`.
    pub fn load(samples: &[Sample], resolution: usize, norm: &Normalization) -> Result<Self> {
        let images = samples
            .par_iter()
            .map(|s| decode(&s.path).map(|img| resize_and_crop(&img, resolution)))
            .collect::<Result<Vec<_>>>()?;
        let images = images.par_iter().map(|img| to_tensor(img, norm, false)).collect();
        Ok(Self { images, labels: samples.iter().map(|s| s.label).collect() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the samples at `order` into `[n, 3, R, R]`.
    pub fn batch(&self, order: &[usize], flips: Option<&[bool]>) -> Result<(Tensor<f32>, Vec<usize>)> {
        let items: Vec<Tensor<f32>> = order
            .iter()
            .enumerate()
            .map(|(k, &i)| match flips {
                Some(f) if f[k] => flip_horizontal(&self.images[i]),
                _ => self.images[i].clone(),
            })
            .collect();
        Ok((Tensor::stack(&items)?, order.iter().map(|&i| self.labels[i]).collect()))
    }
}

fn flip_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    let w = t.shape()[t.rank() - 1];
    let d = t.data();
    Tensor::from_fn(t.shape().to_vec(), |i| d[i - i % w + (w - 1 - i % w)])
}
