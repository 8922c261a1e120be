//! Image datasets: CIFAR-10 binary batches and procedurally drawn shapes.
//!
//! Images are stored as channel-planar bytes and only converted to `[-1, 1]`
//! floats when a batch is materialized.

mod cifar;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub use cifar::{
    load_cifar10, read_cifar_batch, CifarSplits, CIFAR_CLASSES, CIFAR_IMAGE_BYTES, CIFAR_RECORD_BYTES,
    CIFAR_RECORDS_PER_FILE, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
pub use synthetic::{synthetic_shapes_dataset, ShapeClass};

/// Planar `u8` images with integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let per = channels * height * width;
        if per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::Format {
                what: "dataset".into(),
                detail: format!(
                    "{} pixel bytes for {} images of {channels}x{height}x{width}",
                    pixels.len(),
                    labels.len()
                ),
            });
        }
        Ok(Dataset {
            channels,
            height,
            width,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_bytes(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_bytes();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_bytes());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            pixels,
            labels,
            ..*self
        }
    }

    /// Normalized `[N, C, H, W]` batch of the images at `indices`.
    pub fn batch(&self, indices: &[usize]) -> ImageBatch {
        let mut values = Vec::with_capacity(indices.len() * self.image_bytes());
        for &i in indices {
            values.extend(self.image(i).iter().map(|&b| normalize_byte(b)));
        }
        ImageBatch {
            images: Tensor::new(&[indices.len(), self.channels, self.height, self.width], values)
                .expect("shape"),
            labels: indices.iter().map(|&i| self.labels[i] as usize).collect(),
        }
    }

    /// The whole dataset as one batch.
    pub fn to_batch(&self) -> ImageBatch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Normalized images in `[-1, 1]` and their labels.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `x ↦ x / 127.5 − 1`.
pub fn normalize_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

pub fn normalize(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| normalize_byte(b)).collect()
}

/// Inverse of [`normalize`], rounding to the nearest byte and clamping.
pub fn denormalize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Keeps images whose label is in `labels`, preserving order.
pub fn filter_class(ds: &Dataset, labels: &[u8]) -> Result<Dataset> {
    if let Some(l) = labels.iter().find(|&&l| l as usize >= CIFAR_CLASSES) {
        return Err(Error::Config(format!("class label {l} outside 0..=9")));
    }
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| labels.contains(&ds.labels[i])).collect();
    if keep.is_empty() {
        log::warn!("class filter {labels:?} selected no images");
    } else {
        log::info!("class filter {labels:?}: kept {} of {} images", keep.len(), ds.len());
    }
    Ok(ds.subset(&keep))
}

/// Seeded subset of exactly `cap` images, kept in original order.
pub fn apply_cap(ds: &Dataset, cap: usize, seed: u64) -> Result<Dataset> {
    if cap > ds.len() {
        return Err(Error::Config(format!(
            "sample cap {cap} exceeds the {} available images",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::seeded(seed, rng::stream::DATA));
    idx.truncate(cap);
    idx.sort_unstable();
    Ok(ds.subset(&idx))
}

/// Shuffled full batches for one epoch. The final partial batch is dropped.
pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter<'_> {
    type Item = ImageBatch;

    fn next(&mut self) -> Option<ImageBatch> {
        if self.pos + self.batch_size > self.order.len() {
            return None;
        }
        let idx = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        Some(self.dataset.batch(idx))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos) / self.batch_size;
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

/// The shuffle for `(seed, epoch)`: the epoch selects the ChaCha stream.
pub fn shuffle_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut r: Rng = rng::seeded(seed, (rng::stream::SHUFFLE << 32) | epoch);
    order.shuffle(&mut r);
    order
}

pub fn batch_iter(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(BatchIter {
        dataset,
        order: shuffle_order(dataset.len(), seed, epoch),
        batch_size,
        pos: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Cifar10,
    Synthetic,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" | "cifar" => Ok(DataSource::Cifar10),
            "synthetic" => Ok(DataSource::Synthetic),
            other => Err(Error::Config(format!("unknown dataset source `{other}`"))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Cifar10 => "cifar10",
            DataSource::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Everything needed to materialize one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// CIFAR labels, or shape-class ids (0 disc, 1 square, 2 bar) for synthetic data.
    pub classes: Vec<u8>,
    pub split: Split,
    pub sample_cap: Option<usize>,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    /// Synthetic images per class (train split; test uses a quarter).
    pub synthetic_per_class: usize,
    pub image_size: usize,
}

impl DatasetSpec {
    pub fn resolve(&self) -> Result<Dataset> {
        let ds = match self.source {
            DataSource::Cifar10 => {
                let dir = self.data_dir.as_ref().ok_or_else(|| {
                    Error::Config("cifar10 source needs a data directory (--data-dir or HQGAN_DATA_DIR)".into())
                })?;
                let splits = load_cifar10(dir)?;
                let split = match self.split {
                    Split::Train => splits.train,
                    Split::Test => splits.test,
                };
                filter_class(&split, &self.classes)?
            }
            DataSource::Synthetic => {
                let classes = self
                    .classes
                    .iter()
                    .map(|&c| ShapeClass::from_id(c))
                    .collect::<Result<Vec<_>>>()?;
                let (n, seed) = match self.split {
                    Split::Train => (self.synthetic_per_class, self.seed),
                    Split::Test => ((self.synthetic_per_class / 4).max(1), self.seed ^ 0x7e57_7e57),
                };
                synthetic_shapes_dataset(n, self.image_size, &classes, seed)?
            }
        };
        match self.sample_cap {
            Some(cap) => apply_cap(&ds, cap, self.seed),
            None => Ok(ds),
        }
    }
}
