//! ResNet-18-shaped discriminator backbone with a classical or hybrid head.
//!
//! Backbone modifications relative to the stock classifier: a 3×3 stride-1
//! spectrally normalized stem convolution, no max-pool, and an identity in
//! place of the final FC layer so the backbone emits pooled features.
//! Tensor names follow torchvision's `resnet18` layout (`conv1.weight`,
//! `layer2.0.downsample.0.weight`, ...).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{self, join, BatchNorm, Conv2d, Linear, Mode, Module, Role, SpectralConv2d};
use crate::quantum::QuantumLayer;
use crate::rng::Rng;
use crate::tensor::{self, Tensor};
use crate::transfer::WeightStore;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Stem width followed by the four stage widths.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub input_size: usize,
    pub in_channels: usize,
    /// Power iterations per training forward pass of the stem.
    pub power_iterations: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::resnet18()
    }
}

impl BackboneConfig {
    pub fn resnet18() -> Self {
        BackboneConfig {
            stage_channels: vec![64, 64, 128, 256, 512],
            blocks_per_stage: 2,
            input_size: 32,
            in_channels: 3,
            power_iterations: 1,
        }
    }

    /// Narrow variant for tests and desk-scale runs.
    pub fn reduced(widths: [usize; 5], input_size: usize) -> Self {
        BackboneConfig {
            stage_channels: widths.to_vec(),
            input_size,
            ..Self::resnet18()
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.stage_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 5 || self.stage_channels.contains(&0) {
            return Err(Error::Config(format!(
                "backbone needs 5 nonzero widths (stem + 4 stages), got {:?}",
                self.stage_channels
            )));
        }
        if self.blocks_per_stage == 0 || self.in_channels == 0 || self.power_iterations == 0 {
            return Err(Error::Config("backbone block count, input channels and power iterations must be positive".into()));
        }
        if self.input_size < 8 {
            return Err(Error::Config(format!("backbone input_size {} too small", self.input_size)));
        }
        Ok(())
    }
}

/// Two 3×3 convolutions with an identity or 1×1 projection shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub downsample: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(in_c: usize, out_c: usize, stride: usize, rng: &mut Rng) -> Self {
        let downsample = (stride != 1 || in_c != out_c)
            .then(|| (Conv2d::new(in_c, out_c, 1, stride, false, rng), BatchNorm::new(out_c)));
        BasicBlock {
            conv1: Conv2d::new(in_c, out_c, 3, stride, false, rng),
            bn1: BatchNorm::new(out_c),
            conv2: Conv2d::new(out_c, out_c, 3, 1, false, rng),
            bn2: BatchNorm::new(out_c),
            downsample,
        }
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = tensor::relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?;
        let short = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, mode)?,
            None => x.clone(),
        };
        Ok(tensor::relu(&tensor::add(&h, &short)?))
    }
}

impl Module for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.downsample {
            conv.visit(&join(prefix, "downsample.0"), f);
            bn.visit(&join(prefix, "downsample.1"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    pub conv1: SpectralConv2d,
    pub bn1: BatchNorm,
    pub layers: Vec<Vec<BasicBlock>>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let w = &config.stage_channels;
        let stem = Conv2d::new(config.in_channels, w[0], 3, 1, false, rng);
        let conv1 = SpectralConv2d::new(stem, config.power_iterations, rng);
        let bn1 = BatchNorm::new(w[0]);
        let mut layers = Vec::with_capacity(4);
        let mut in_c = w[0];
        for (stage, &out_c) in w[1..].iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for b in 0..config.blocks_per_stage {
                blocks.push(BasicBlock::new(in_c, out_c, if b == 0 { stride } else { 1 }, rng));
                in_c = out_c;
            }
            layers.push(blocks);
        }
        Ok(Backbone {
            config,
            conv1,
            bn1,
            layers,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// `[N, C, S, S] -> [N, feature_dim]`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = &self.config;
        let s = x.shape();
        if s.len() != 4 || s[1] != c.in_channels || s[2] != c.input_size || s[3] != c.input_size {
            return Err(Error::shape(
                "backbone input",
                s,
                &[s.first().copied().unwrap_or(0), c.in_channels, c.input_size, c.input_size],
            ));
        }
        let mut h = tensor::relu(&self.bn1.forward(&self.conv1.forward(x, mode)?, mode)?);
        for stage in &self.layers {
            for block in stage {
                h = block.forward(&h, mode)?;
            }
        }
        tensor::global_avg_pool(&h)
    }

    /// Turns per-pass refinement of the stem's singular vector on or off.
    pub fn set_spectral_updates(&self, enabled: bool) {
        self.conv1.update_u.set(enabled);
    }

    pub fn to_weight_store(&self) -> WeightStore {
        WeightStore::from_module(self)
    }

    /// Overwrites every tensor from `store`; names and shapes must match exactly.
    pub fn load_weights(&self, store: &WeightStore) -> Result<()> {
        store.load_into(self)
    }
}

impl Module for Backbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (i, stage) in self.layers.iter().enumerate() {
            for (j, block) in stage.iter().enumerate() {
                block.visit(&join(prefix, &format!("layer{}.{j}", i + 1)), f);
            }
        }
    }
}

/// Builds a backbone, optionally initialized from pretrained weights. Loaded
/// layers stay trainable.
pub fn build_backbone(config: BackboneConfig, weights: Option<&WeightStore>, rng: &mut Rng) -> Result<Backbone> {
    let backbone = Backbone::new(config, rng)?;
    if let Some(store) = weights {
        backbone.load_weights(store)?;
    }
    Ok(backbone)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classical,
    Hybrid,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Classical => "classical",
            HeadKind::Hybrid => "hybrid",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(HeadKind::Classical),
            "hybrid" | "quantum" => Ok(HeadKind::Hybrid),
            other => Err(Error::Config(format!("unknown head kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub n_qubits: usize,
}

#[derive(Debug, Clone)]
pub enum Head {
    /// `features → 1`.
    Classical { fc: Linear },
    /// `features → n_qubits` projection, variational block, `n_qubits → 1`.
    Hybrid {
        proj: Linear,
        quantum: QuantumLayer,
        out: Linear,
    },
}

impl Head {
    pub fn new(config: HeadConfig, features: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match config.kind {
            HeadKind::Classical => Head::Classical {
                fc: Linear::new(features, 1, true, rng),
            },
            HeadKind::Hybrid => {
                if config.n_qubits == 0 {
                    return Err(Error::Config("hybrid head needs n_qubits >= 1".into()));
                }
                Head::Hybrid {
                    proj: Linear::new(features, config.n_qubits, true, rng),
                    quantum: QuantumLayer::new(config.n_qubits, rng)?,
                    out: Linear::new(config.n_qubits, 1, true, rng),
                }
            }
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Classical { .. } => HeadKind::Classical,
            Head::Hybrid { .. } => HeadKind::Hybrid,
        }
    }

    /// Raw logits `[N, 1]`.
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        match self {
            Head::Classical { fc } => fc.forward(features),
            Head::Hybrid { proj, quantum, out } => {
                let angles = proj.forward(features)?;
                out.forward(&quantum.forward(&angles)?)
            }
        }
    }

    /// Circuit expectations of the hybrid head, `None` for the classical head.
    pub fn circuit_outputs(&self, features: &Tensor) -> Result<Option<Tensor>> {
        match self {
            Head::Classical { .. } => Ok(None),
            Head::Hybrid { proj, quantum, .. } => Ok(Some(quantum.forward(&proj.forward(features)?)?)),
        }
    }
}

impl Module for Head {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        match self {
            Head::Classical { fc } => fc.visit(&join(prefix, "fc"), f),
            Head::Hybrid { proj, quantum, out } => {
                proj.visit(&join(prefix, "proj"), f);
                quantum.visit(&join(prefix, "quantum"), f);
                out.visit(&join(prefix, "out"), f);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub backbone: Backbone,
    pub head: Head,
}

impl Discriminator {
    pub fn new(backbone: Backbone, head: HeadConfig, rng: &mut Rng) -> Result<Self> {
        let head = Head::new(head, backbone.feature_dim(), rng)?;
        Ok(Discriminator { backbone, head })
    }

    pub fn forward(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        self.head.forward(&self.backbone.forward(images, mode)?)
    }

    pub fn trainable_parameters(&self) -> usize {
        nn::count_trainable(self)
    }
}

impl Module for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
}
