//! Backbone pretraining and the `WeightStore` file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic    b"HQWS"
//! version  u32
//! count    u32
//! count × { name_len u32, name [u8; name_len] (UTF-8),
//!           ndim u32, dims [u64; ndim], values [f64; Π dims] }
//! sha256   [u8; 32] over every preceding byte
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{batch_iter, Dataset};
use crate::discriminator::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::nn::{self, join, Linear, Mode, Module, Role};
use crate::rng::{self, Rng};
use crate::tensor::{self, no_grad, Adam, AdamConfig, Tensor};

pub const WEIGHT_MAGIC: &[u8; 4] = b"HQWS";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const CHECKSUM_BYTES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered named tensors, as persisted on disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore {
    records: Vec<WeightRecord>,
}

impl WeightStore {
    pub fn new(records: Vec<WeightRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::Format {
                    what: "weight store".into(),
                    detail: format!("duplicate tensor name `{}`", r.name),
                });
            }
            if r.shape.iter().product::<usize>() != r.values.len() {
                return Err(Error::Format {
                    what: "weight store".into(),
                    detail: format!("`{}` has shape {:?} but {} values", r.name, r.shape, r.values.len()),
                });
            }
        }
        Ok(WeightStore { records })
    }

    /// Snapshot of every parameter and buffer of `module`.
    pub fn from_module(module: &dyn Module) -> Self {
        let records = nn::named_tensors(module)
            .into_iter()
            .map(|(name, t, _)| WeightRecord {
                name,
                shape: t.shape().to_vec(),
                values: t.to_vec(),
            })
            .collect();
        WeightStore { records }
    }

    pub fn records(&self) -> &[WeightRecord] {
        &self.records
    }

    pub fn get(&self, name: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Copies values into `module`. Every module tensor needs a record of the
    /// same shape and every record must be consumed; nothing is written
    /// unless the whole store matches.
    pub fn load_into(&self, module: &dyn Module) -> Result<()> {
        let targets = nn::named_tensors(module);
        for (name, t, _) in &targets {
            let rec = self.get(name).ok_or_else(|| Error::WeightMismatch {
                layer: name.clone(),
                detail: "missing from weight store".into(),
            })?;
            if rec.shape != t.shape() {
                return Err(Error::WeightMismatch {
                    layer: name.clone(),
                    detail: format!("stored shape {:?}, model expects {:?}", rec.shape, t.shape()),
                });
            }
        }
        let known: HashSet<&str> = targets.iter().map(|(n, _, _)| n.as_str()).collect();
        if let Some(extra) = self.records.iter().find(|r| !known.contains(r.name.as_str())) {
            return Err(Error::WeightMismatch {
                layer: extra.name.clone(),
                detail: "not present in the model".into(),
            });
        }
        for (name, t, _) in &targets {
            let rec = self.get(name).expect("checked above");
            t.data_mut().copy_from_slice(&rec.values);
        }
        Ok(())
    }

    /// Records whose name starts with `prefix.`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> WeightStore {
        let lead = format!("{prefix}.");
        WeightStore {
            records: self
                .records
                .iter()
                .filter_map(|r| {
                    r.name.strip_prefix(&lead).map(|n| WeightRecord {
                        name: n.to_string(),
                        ..r.clone()
                    })
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "weight file".into(),
            detail,
        };
        if bytes.len() < 12 + CHECKSUM_BYTES || &bytes[..4] != WEIGHT_MAGIC {
            return Err(bad("not a weight file (bad magic or truncated header)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_BYTES);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut cur = Cursor { buf: body, pos: 4 };
        let version = cur.u32()?;
        if version != WEIGHT_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: WEIGHT_FORMAT_VERSION,
            });
        }
        let count = cur.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| bad("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(cur.u64()? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| bad(format!("`{name}` shape overflows")))?;
            let raw = cur.take(numel.checked_mul(8).ok_or_else(|| bad(format!("`{name}` too large")))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            records.push(WeightRecord { name, shape, values });
        }
        if cur.pos != body.len() {
            return Err(bad(format!("{} trailing bytes before checksum", body.len() - cur.pos)));
        }
        WeightStore::new(records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                what: "weight file".into(),
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_weights(store: &WeightStore, path: &Path) -> Result<()> {
    store.save(path)
}

pub fn load_weights(path: &Path) -> Result<WeightStore> {
    WeightStore::load(path)
}

/// Backbone with a temporary softmax head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub backbone: Backbone,
    pub fc: Linear,
    n_classes: usize,
}

impl Classifier {
    pub fn new(config: BackboneConfig, n_classes: usize, rng: &mut Rng) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {n_classes}")));
        }
        let backbone = Backbone::new(config, rng)?;
        let fc = Linear::new(backbone.feature_dim(), n_classes, true, rng);
        Ok(Classifier { backbone, fc, n_classes })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Logits `[N, n_classes]`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.fc.forward(&self.backbone.forward(x, mode)?)
    }

    /// Fraction of `dataset` classified correctly in eval mode.
    pub fn accuracy(&self, dataset: &Dataset, batch_size: usize) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::Config("accuracy of an empty dataset".into()));
        }
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..dataset.len()).collect();
        for chunk in idx.chunks(batch_size.max(1)) {
            let batch = dataset.batch(chunk);
            let logits = no_grad(|| self.forward(&batch.images, Mode::Eval))?;
            let data = logits.data();
            for (row, &label) in data.chunks(self.n_classes).zip(&batch.labels) {
                if argmax(row) == label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

impl Module for Classifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.fc.visit(&join(prefix, "fc"), f);
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub backbone: BackboneConfig,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn new(backbone: BackboneConfig, seed: u64) -> Self {
        PretrainConfig {
            backbone,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub epochs: usize,
    pub final_accuracy: f64,
    /// Mean training cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh classifier on `dataset` with cross-entropy.
pub fn pretrain_classifier(
    dataset: &Dataset,
    n_classes: usize,
    epochs: usize,
    config: &PretrainConfig,
) -> Result<(Classifier, PretrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    if let Some(&l) = dataset.labels().iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Config(format!("label {l} outside {n_classes} pretraining classes")));
    }
    let batch_size = config.batch_size.min(dataset.len());
    if batch_size < 2 {
        return Err(Error::Config("pretraining needs at least 2 images per batch".into()));
    }
    let mut init = rng::seeded(config.seed, rng::stream::PRETRAIN);
    let model = Classifier::new(config.backbone.clone(), n_classes, &mut init)?;
    let params = nn::parameters(&model);
    let mut opt = Adam::new(&params, config.optimizer)?;
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut total = 0.0;
        let mut steps = 0usize;
        for batch in batch_iter(dataset, batch_size, config.seed ^ 0x5eed_0f_c1a5, epoch as u64)? {
            nn::zero_grad(&model);
            let logits = model.forward(&batch.images, Mode::Train)?;
            let loss = tensor::cross_entropy(&logits, &batch.labels)?;
            loss.backward()?;
            opt.step(&params)?;
            total += loss.item();
            steps += 1;
        }
        let mean = total / steps as f64;
        log::info!("pretrain epoch {}: loss {mean:.4}", epoch + 1);
        epoch_losses.push(mean);
    }
    let final_accuracy = model.accuracy(dataset, 64)?;
    Ok((
        model,
        PretrainReport {
            epochs,
            final_accuracy,
            epoch_losses,
        },
    ))
}

/// Pretrains and returns the backbone weights only; the softmax head is
/// discarded.
pub fn pretrain_backbone(
    dataset: &Dataset,
    n_classes: usize,
    epochs: usize,
    config: &PretrainConfig,
) -> Result<(WeightStore, PretrainReport)> {
    let (model, report) = pretrain_classifier(dataset, n_classes, epochs, config)?;
    Ok((model.backbone.to_weight_store(), report))
}
