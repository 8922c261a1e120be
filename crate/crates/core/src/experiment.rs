//! Experiment configuration files and the end-to-end runner.
//!
//! Configs are flat `key = value` lines; `#` starts a comment. Unknown keys,
//! duplicates and malformed values are reported with their line number.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DataSource, Dataset, DatasetSpec, Split, CIFAR_CLASSES};
use crate::discriminator::{build_backbone, BackboneConfig, Discriminator, HeadConfig, HeadKind};
use crate::error::{Error, Result};
use crate::export;
use crate::generator::{BlockKind, Generator, GeneratorConfig, LatentDistribution};
use crate::metrics::BackboneExtractor;
use crate::rng;
use crate::tensor::AdamConfig;
use crate::trainer::{self, EvalContext, RunLog, TrainConfig};
use crate::transfer::{self, PretrainConfig, PretrainReport, WeightStore};

/// `(generator block, discriminator head)` for each experiment id.
pub fn experiment_kinds(id: u8) -> Result<(BlockKind, HeadKind)> {
    match id {
        1 => Ok((BlockKind::Classical, HeadKind::Classical)),
        2 => Ok((BlockKind::Classical, HeadKind::Hybrid)),
        3 => Ok((BlockKind::Quantum, HeadKind::Classical)),
        4 | 5 => Ok((BlockKind::Quantum, HeadKind::Hybrid)),
        other => Err(Error::Config(format!("experiment id must be 1-5, got {other}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneInit {
    Pretrained,
    Random,
}

impl FromStr for BackboneInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" => Ok(BackboneInit::Pretrained),
            "random" => Ok(BackboneInit::Random),
            other => Err(Error::Config(format!("unknown backbone init `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: u8,
    pub generator: GeneratorConfig,
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub backbone_init: BackboneInit,
    /// External backbone weights; replaces the desk-scale pretrained backbone.
    pub pretrained: Option<PathBuf>,
    pub pretrain_epochs: usize,
    pub pretrain_dataset: DatasetSpec,
    pub output_dir: PathBuf,
    pub grid_samples: usize,
    pub grid_columns: usize,
}

const KEYS: &[&str] = &[
    "experiment",
    "generator",
    "discriminator",
    "dataset",
    "classes",
    "sample_cap",
    "data_dir",
    "synthetic_per_class",
    "image_size",
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "metric_every",
    "seed",
    "latent",
    "n_eval",
    "is_splits",
    "n_qubits",
    "generator_channels",
    "backbone_widths",
    "backbone_init",
    "pretrained",
    "pretrain_epochs",
    "pretrain_dataset",
    "pretrain_classes",
    "pretrain_cap",
    "pretrain_per_class",
    "output_dir",
    "grid_samples",
    "grid_columns",
];

struct Entries<'a> {
    path: &'a Path,
    map: HashMap<&'a str, (usize, &'a str)>,
}

impl<'a> Entries<'a> {
    fn parse(path: &'a Path, text: &'a str) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ConfigFile {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(err(format!("unknown key `{k}`")));
            }
            if let Some((first, _)) = map.insert(k, (i + 1, v)) {
                return Err(err(format!("duplicate key `{k}` (first set on line {first})")));
            }
        }
        Ok(Entries { path, map })
    }

    fn err(&self, key: &str, message: String) -> Error {
        Error::ConfigFile {
            path: self.path.to_path_buf(),
            line: self.map.get(key).map_or(0, |e| e.0),
            message: format!("{key}: {message}"),
        }
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(|e| e.1)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| self.err(key, format!("invalid value `{v}`: {e}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| self.err(key, format!("invalid list item `{}`: {e}", s.trim())))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            line: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let e = Entries::parse(path, text)?;
        let experiment: u8 = e.get("experiment")?.ok_or_else(|| e.err("experiment", "required".into()))?;
        let (block_kind, head_kind) = experiment_kinds(experiment).map_err(|err| e.err("experiment", err.to_string()))?;
        if let Some(g) = e.get::<BlockKind>("generator")? {
            if g != block_kind {
                return Err(e.err("generator", format!("experiment {experiment} uses a {block_kind} generator")));
            }
        }
        if let Some(d) = e.get::<HeadKind>("discriminator")? {
            if d != head_kind {
                return Err(e.err("discriminator", format!("experiment {experiment} uses a {head_kind} discriminator")));
            }
        }

        let source: DataSource = e.or("dataset", DataSource::Synthetic)?;
        let image_size: usize = e.or("image_size", 32)?;
        let seed: u64 = e.or("seed", 0)?;
        let data_dir: Option<PathBuf> = e.get("data_dir")?;
        let default_classes = match source {
            DataSource::Cifar10 => vec![2],
            DataSource::Synthetic => vec![0, 1],
        };
        let classes: Vec<u8> = e.list("classes")?.unwrap_or(default_classes);
        if classes.is_empty() {
            return Err(e.err("classes", "at least one class required".into()));
        }
        let max_class = match source {
            DataSource::Cifar10 => CIFAR_CLASSES as u8,
            DataSource::Synthetic => 3,
        };
        if let Some(c) = classes.iter().find(|&&c| c >= max_class) {
            return Err(e.err("classes", format!("class {c} out of range for {source}")));
        }
        if source == DataSource::Cifar10 && image_size != 32 {
            return Err(e.err("image_size", "CIFAR-10 images are 32x32".into()));
        }
        let dataset = DatasetSpec {
            source,
            classes: classes.clone(),
            split: Split::Train,
            sample_cap: e.get("sample_cap")?,
            seed,
            data_dir: data_dir.clone(),
            synthetic_per_class: e.or("synthetic_per_class", 256)?,
            image_size,
        };

        let pretrain_source: DataSource = e.or("pretrain_dataset", source)?;
        let pretrain_classes: Vec<u8> = match e.list("pretrain_classes")? {
            Some(c) => c,
            None => match pretrain_source {
                DataSource::Cifar10 => (0..CIFAR_CLASSES as u8).filter(|c| !classes.contains(c)).collect(),
                DataSource::Synthetic => vec![0, 1, 2],
            },
        };
        if pretrain_classes.len() < 2 {
            return Err(e.err("pretrain_classes", "pretraining needs at least 2 classes".into()));
        }
        let pretrain_dataset = DatasetSpec {
            source: pretrain_source,
            classes: pretrain_classes,
            split: Split::Train,
            sample_cap: e.get("pretrain_cap")?,
            seed: seed ^ 0x0bad_5eed,
            data_dir,
            synthetic_per_class: e.or("pretrain_per_class", 128)?,
            image_size,
        };

        let n_qubits: usize = e.or("n_qubits", 5)?;
        let generator = GeneratorConfig {
            block_kind,
            n_qubits,
            base_channels: e.or("generator_channels", 256)?,
            output_channels: 3,
            output_size: image_size,
            latent: e.or("latent", LatentDistribution::Uniform)?,
        };
        generator.validate().map_err(|err| e.err("generator_channels", err.to_string()))?;
        let widths: Vec<usize> = e.list("backbone_widths")?.unwrap_or_else(|| BackboneConfig::resnet18().stage_channels);
        let backbone = BackboneConfig {
            stage_channels: widths,
            input_size: image_size,
            ..BackboneConfig::resnet18()
        };
        backbone.validate().map_err(|err| e.err("backbone_widths", err.to_string()))?;

        let train = TrainConfig {
            optimizer: AdamConfig {
                learning_rate: e.or("learning_rate", 2e-4)?,
                beta1: e.or("beta1", 0.5)?,
                beta2: e.or("beta2", 0.999)?,
                ..AdamConfig::default()
            },
            batch_size: e.or("batch_size", 8)?,
            epochs: e.or("epochs", 100)?,
            metric_every: e.or("metric_every", 10)?,
            seed,
            latent: generator.latent,
            n_eval: e.get("n_eval")?,
            is_splits: e.or("is_splits", 1)?,
        };
        train.validate().map_err(|err| e.err("epochs", err.to_string()))?;

        let grid_samples: usize = e.or("grid_samples", 16)?;
        let grid_columns: usize = e.or("grid_columns", 4)?;
        if grid_samples == 0 || grid_columns == 0 {
            return Err(e.err("grid_samples", "grid sizes must be positive".into()));
        }
        Ok(ExperimentConfig {
            experiment,
            generator,
            backbone,
            head: HeadConfig { kind: head_kind, n_qubits },
            dataset,
            train,
            backbone_init: e.or("backbone_init", BackboneInit::Pretrained)?,
            pretrained: e.get("pretrained")?,
            pretrain_epochs: e.or("pretrain_epochs", 10)?,
            pretrain_dataset,
            output_dir: e.or("output_dir", PathBuf::from("runs"))?,
            grid_samples,
            grid_columns,
        })
    }

    /// Applies command-line overrides.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        data_dir: Option<PathBuf>,
        pretrained: Option<PathBuf>,
        out: Option<PathBuf>,
    ) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.dataset.seed = s;
            self.pretrain_dataset.seed = s ^ 0x0bad_5eed;
        }
        if let Some(d) = data_dir {
            self.dataset.data_dir = Some(d.clone());
            self.pretrain_dataset.data_dir = Some(d);
        }
        if pretrained.is_some() {
            self.pretrained = pretrained;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self
    }

    /// One `(subdirectory, dataset)` per run: experiment 5 trains a separate
    /// model for every listed class.
    pub fn runs(&self) -> Vec<(Option<String>, DatasetSpec)> {
        if self.experiment == 5 {
            self.dataset
                .classes
                .iter()
                .map(|&c| {
                    (
                        Some(format!("class_{c}")),
                        DatasetSpec {
                            classes: vec![c],
                            ..self.dataset.clone()
                        },
                    )
                })
                .collect()
        } else {
            vec![(None, self.dataset.clone())]
        }
    }

    /// Checks referenced paths without loading anything.
    pub fn check_paths(&self) -> Result<()> {
        for spec in [&self.dataset, &self.pretrain_dataset] {
            if spec.source == DataSource::Cifar10 {
                match &spec.data_dir {
                    None => {
                        return Err(Error::Config(
                            "cifar10 needs a data directory (data_dir, --data-dir or HQGAN_DATA_DIR)".into(),
                        ))
                    }
                    Some(d) if !d.is_dir() => {
                        return Err(Error::Config(format!("data directory {} does not exist", d.display())))
                    }
                    _ => {}
                }
            }
        }
        if let Some(p) = &self.pretrained {
            if !p.is_file() {
                return Err(Error::Config(format!("pretrained weights {} not found", p.display())));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = &self.generator;
        writeln!(f, "experiment {}", self.experiment)?;
        writeln!(
            f,
            "  generator: {} block, {} qubits, base channels {}, output {}x{}",
            g.block_kind, g.n_qubits, g.base_channels, g.output_size, g.output_size
        )?;
        writeln!(
            f,
            "  discriminator: {} head, backbone widths {:?}, init {}",
            self.head.kind,
            self.backbone.stage_channels,
            match (&self.pretrained, self.backbone_init) {
                (Some(p), _) => format!("from {}", p.display()),
                (None, BackboneInit::Pretrained) => format!("pretrained for {} epochs", self.pretrain_epochs),
                (None, BackboneInit::Random) => "random".into(),
            }
        )?;
        for (sub, spec) in self.runs() {
            writeln!(
                f,
                "  run {}: {} classes {:?}, cap {}",
                sub.as_deref().unwrap_or("."),
                spec.source,
                spec.classes,
                spec.sample_cap.map_or("none".into(), |c| c.to_string())
            )?;
        }
        writeln!(
            f,
            "  pretraining data: {} classes {:?}",
            self.pretrain_dataset.source, self.pretrain_dataset.classes
        )?;
        let t = &self.train;
        writeln!(
            f,
            "  training: {} epochs, batch {}, lr {}, betas ({}, {}), seed {}, metrics every {} epochs",
            t.epochs, t.batch_size, t.optimizer.learning_rate, t.optimizer.beta1, t.optimizer.beta2, t.seed, t.metric_every
        )?;
        write!(f, "  output: {}", self.output_dir.display())
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".hqgan.lock";

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write as _;
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "output directory {} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub log: RunLog,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub pretrain: Option<PretrainReport>,
    pub runs: Vec<RunSummary>,
}

/// Pretrains (or loads) the backbone, then trains and evaluates every run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.check_paths()?;
    let _lock = RunLock::acquire(&config.output_dir)?;
    log::info!("plan:\n{config}");

    let pre_data = config.pretrain_dataset.resolve()?;
    let n_classes = config.pretrain_dataset.classes.len();
    let pre_data = relabel(&pre_data, &config.pretrain_dataset)?;
    let pre_cfg = PretrainConfig::new(config.backbone.clone(), config.train.seed);
    let (classifier, report) = transfer::pretrain_classifier(&pre_data, n_classes, config.pretrain_epochs, &pre_cfg)?;
    log::info!(
        "pretraining: {} epochs, training accuracy {:.4}",
        report.epochs,
        report.final_accuracy
    );
    WeightStore::from_module(&classifier).save(&config.output_dir.join("extractor.hqws"))?;
    let backbone_weights = match (&config.pretrained, config.backbone_init) {
        (Some(p), _) => Some(WeightStore::load(p)?),
        (None, BackboneInit::Pretrained) => Some(classifier.backbone.to_weight_store()),
        (None, BackboneInit::Random) => None,
    };
    if let Some(w) = &backbone_weights {
        w.save(&config.output_dir.join("backbone_init.hqws"))?;
    }
    let extractor = BackboneExtractor::new(classifier);

    let mut runs = Vec::new();
    for (sub, spec) in config.runs() {
        let dir = match &sub {
            Some(s) => config.output_dir.join(s),
            None => config.output_dir.clone(),
        };
        fs::create_dir_all(&dir)?;
        let data = spec.resolve()?;
        let held_out = DatasetSpec {
            split: Split::Test,
            sample_cap: None,
            ..spec.clone()
        }
        .resolve()?;
        log::info!(
            "run {}: {} training images, {} held-out",
            dir.display(),
            data.len(),
            held_out.len()
        );
        let log = run_single(config, &data, &held_out, backbone_weights.as_ref(), &extractor, &dir)?;
        runs.push(RunSummary { dir, log });
    }
    Ok(ExperimentSummary {
        pretrain: Some(report),
        runs,
    })
}

/// Maps the dataset's labels onto `0..classes.len()` in config order.
fn relabel(ds: &Dataset, spec: &DatasetSpec) -> Result<Dataset> {
    if spec.source == DataSource::Synthetic {
        return Ok(ds.clone());
    }
    let labels = ds
        .labels()
        .iter()
        .map(|l| spec.classes.iter().position(|c| c == l).map(|p| p as u8))
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| Error::Config("pretraining data contains unlisted classes".into()))?;
    Dataset::new(ds.channels, ds.height, ds.width, ds.pixels().to_vec(), labels)
}

fn run_single(
    config: &ExperimentConfig,
    data: &Dataset,
    held_out: &Dataset,
    weights: Option<&WeightStore>,
    extractor: &BackboneExtractor,
    dir: &Path,
) -> Result<RunLog> {
    let seed = config.train.seed;
    let generator = Generator::new(config.generator.clone(), &mut rng::seeded(seed, rng::stream::GENERATOR_INIT))?;
    let mut d_rng = rng::seeded(seed, rng::stream::DISCRIMINATOR_INIT);
    let backbone = build_backbone(config.backbone.clone(), weights, &mut d_rng)?;
    let discriminator = Discriminator::new(backbone, config.head, &mut d_rng)?;
    let ctx = EvalContext::new(extractor, held_out, config.train.n_eval, config.train.is_splits, seed)?;
    let mut hook = |epoch: usize, g: &Generator| {
        export::export_samples(
            g,
            config.grid_samples,
            config.grid_columns,
            seed,
            &dir.join(format!("samples_epoch_{epoch}.png")),
        )
    };
    let result = trainer::train(&config.train, generator, discriminator, data, Some(&ctx), &mut hook);
    let (log, gan) = result?;
    export::export_curves(&log, dir)?;
    WeightStore::from_module(&gan.generator).save(&dir.join("generator.hqws"))?;
    WeightStore::from_module(&gan.discriminator).save(&dir.join("discriminator.hqws"))?;
    Ok(log)
}
