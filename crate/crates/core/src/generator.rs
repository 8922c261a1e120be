//! Generator: latent `z` → learning block (classical or quantum) → FC + BN →
//! reshape → two residual upsampling blocks → nearest 2× → 3×3 conv → tanh.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{self, join, BatchNorm, Conv2d, Linear, Mode, Module, Role};
use crate::quantum::QuantumLayer;
use crate::rng::Rng;
use crate::tensor::{self, Tensor};

/// Which learning block processes the latent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Classical,
    Quantum,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Classical => "classical",
            BlockKind::Quantum => "quantum",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(BlockKind::Classical),
            "quantum" | "hybrid" => Ok(BlockKind::Quantum),
            other => Err(Error::Config(format!("unknown block kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentDistribution {
    /// Each component uniform on `[-π/2, π/2]`.
    Uniform,
    StandardNormal,
}

impl FromStr for LatentDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(LatentDistribution::Uniform),
            "normal" | "standard_normal" => Ok(LatentDistribution::StandardNormal),
            other => Err(Error::Config(format!("unknown latent distribution `{other}`"))),
        }
    }
}

impl fmt::Display for LatentDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatentDistribution::Uniform => "uniform",
            LatentDistribution::StandardNormal => "normal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub block_kind: BlockKind,
    pub n_qubits: usize,
    pub base_channels: usize,
    pub output_channels: usize,
    /// Output side length; the FC layer projects to `output_size / 8`.
    pub output_size: usize,
    pub latent: LatentDistribution,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            block_kind: BlockKind::Classical,
            n_qubits: 5,
            base_channels: 256,
            output_channels: 3,
            output_size: 32,
            latent: LatentDistribution::Uniform,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > crate::quantum::MAX_QUBITS {
            return Err(Error::Config(format!("n_qubits {} out of range", self.n_qubits)));
        }
        if self.output_size < 8 || self.output_size % 8 != 0 {
            return Err(Error::Config(format!(
                "generator output_size must be a positive multiple of 8, got {}",
                self.output_size
            )));
        }
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(Error::Config(format!(
                "generator base_channels must be a multiple of 4, got {}",
                self.base_channels
            )));
        }
        if self.output_channels == 0 {
            return Err(Error::Config("generator output_channels must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size right after the reshape.
    pub fn initial_size(&self) -> usize {
        self.output_size / 8
    }
}

/// `n → 1` (no bias) → ReLU → `1 → n` (bias): `3n` parameters.
#[derive(Debug, Clone)]
pub struct ClassicalBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ClassicalBlock {
    pub fn new(n: usize, rng: &mut Rng) -> Self {
        ClassicalBlock {
            fc1: Linear::new(n, 1, false, rng),
            fc2: Linear::new(1, n, true, rng),
        }
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&tensor::relu(&self.fc1.forward(z)?))
    }
}

impl Module for ClassicalBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }
}

#[derive(Debug, Clone)]
pub enum LearningBlock {
    Classical(ClassicalBlock),
    Quantum(QuantumLayer),
}

impl LearningBlock {
    pub fn new(kind: BlockKind, n: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match kind {
            BlockKind::Classical => LearningBlock::Classical(ClassicalBlock::new(n, rng)),
            BlockKind::Quantum => LearningBlock::Quantum(QuantumLayer::new(n, rng)?),
        })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            LearningBlock::Classical(b) => b.forward(z),
            LearningBlock::Quantum(q) => q.forward(z),
        }
    }
}

impl Module for LearningBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        match self {
            LearningBlock::Classical(b) => b.visit(prefix, f),
            LearningBlock::Quantum(q) => q.visit(prefix, f),
        }
    }
}

/// Nearest 2× upsample, then `[3×3 conv → BN → ReLU] × 2` added to a 1×1
/// conv shortcut of the upsampled input.
#[derive(Debug, Clone)]
pub struct ResUpBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub shortcut: Conv2d,
}

impl ResUpBlock {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Self {
        ResUpBlock {
            conv1: Conv2d::new(in_channels, out_channels, 3, 1, false, rng),
            bn1: BatchNorm::new(out_channels),
            conv2: Conv2d::new(out_channels, out_channels, 3, 1, false, rng),
            bn2: BatchNorm::new(out_channels),
            shortcut: Conv2d::new(in_channels, out_channels, 1, 1, true, rng),
        }
    }

    pub fn main_path(&self, up: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = tensor::relu(&self.bn1.forward(&self.conv1.forward(up)?, mode)?);
        Ok(tensor::relu(&self.bn2.forward(&self.conv2.forward(&h)?, mode)?))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let up = tensor::upsample_nearest2x(x)?;
        let main = self.main_path(&up, mode)?;
        let short = self.shortcut.forward(&up)?;
        tensor::add(&main, &short)
    }
}

impl Module for ResUpBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.shortcut.visit(&join(prefix, "shortcut"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    pub block: LearningBlock,
    pub fc: Linear,
    pub bn: BatchNorm,
    pub up1: ResUpBlock,
    pub up2: ResUpBlock,
    pub final_conv: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let n = config.n_qubits;
        let c = config.base_channels;
        let s = config.initial_size();
        let block = LearningBlock::new(config.block_kind, n, rng)?;
        let fc = Linear::new(n, c * s * s, true, rng);
        let bn = BatchNorm::new(c * s * s);
        let up1 = ResUpBlock::new(c, c / 2, rng);
        let up2 = ResUpBlock::new(c / 2, c / 4, rng);
        let final_conv = Conv2d::new(c / 4, config.output_channels, 3, 1, true, rng);
        Ok(Generator {
            config,
            block,
            fc,
            bn,
            up1,
            up2,
            final_conv,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_traced(z, mode).map(|(y, _)| y)
    }

    /// Forward pass that also records the shape after every stage:
    /// latent, FC, reshape, ResUp 1, ResUp 2, final upsample, output.
    pub fn forward_traced(&self, z: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let n = self.config.n_qubits;
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != n {
            return Err(Error::shape("generator latent", zs, &[zs.first().copied().unwrap_or(0), n]));
        }
        let batch = zs[0];
        let (c, s) = (self.config.base_channels, self.config.initial_size());
        let mut trace = vec![zs.to_vec()];
        let h = self.block.forward(z)?;
        let h = self.fc.forward(&h)?;
        trace.push(h.shape().to_vec());
        let h = self.bn.forward(&h, mode)?;
        let h = tensor::reshape(&h, &[batch, c, s, s])?;
        trace.push(h.shape().to_vec());
        let h = self.up1.forward(&h, mode)?;
        trace.push(h.shape().to_vec());
        let h = self.up2.forward(&h, mode)?;
        trace.push(h.shape().to_vec());
        let h = tensor::upsample_nearest2x(&h)?;
        trace.push(h.shape().to_vec());
        let h = tensor::tanh(&self.final_conv.forward(&h)?);
        trace.push(h.shape().to_vec());
        Ok((h, trace))
    }

    pub fn sample_latent(&self, batch: usize, rng: &mut Rng) -> Tensor {
        sample_latent(self.config.latent, batch, self.config.n_qubits, rng)
    }

    /// Fresh latents through the generator.
    pub fn generate(&self, batch: usize, rng: &mut Rng, mode: Mode) -> Result<Tensor> {
        let z = self.sample_latent(batch, rng);
        self.forward(&z, mode)
    }

    pub fn trainable_parameters(&self) -> usize {
        nn::count_trainable(self)
    }
}

impl Module for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.block.visit(&join(prefix, "block"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        self.bn.visit(&join(prefix, "bn"), f);
        self.up1.visit(&join(prefix, "up1"), f);
        self.up2.visit(&join(prefix, "up2"), f);
        self.final_conv.visit(&join(prefix, "final_conv"), f);
    }
}

pub fn sample_latent(dist: LatentDistribution, batch: usize, n: usize, rng: &mut Rng) -> Tensor {
    let data = (0..batch * n)
        .map(|_| match dist {
            LatentDistribution::Uniform => rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
            LatentDistribution::StandardNormal => StandardNormal.sample(rng),
        })
        .collect();
    Tensor::new(&[batch, n], data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small(kind: BlockKind) -> GeneratorConfig {
        GeneratorConfig {
            block_kind: kind,
            base_channels: 8,
            output_size: 16,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn classical_block_has_three_n_parameters() {
        let b = ClassicalBlock::new(5, &mut seeded(0, 0));
        assert_eq!(nn::count_trainable(&b), 15);
    }

    #[test]
    fn zeroed_bottleneck_outputs_bias() {
        let b = ClassicalBlock::new(5, &mut seeded(0, 0));
        b.fc1.weight.data_mut().fill(0.0);
        b.fc2.bias.as_ref().unwrap().data_mut().copy_from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let z = Tensor::uniform(&[3, 5], -2.0, 2.0, &mut seeded(1, 0));
        let y = b.forward(&z).unwrap().to_vec();
        for row in y.chunks(5) {
            assert_eq!(row, &[0.1, 0.2, 0.3, 0.4, 0.5]);
        }
    }

    #[test]
    fn parity_between_variants() {
        let gc = Generator::new(small(BlockKind::Classical), &mut seeded(0, 0)).unwrap();
        let gq = Generator::new(small(BlockKind::Quantum), &mut seeded(0, 0)).unwrap();
        assert_eq!(gc.trainable_parameters(), gq.trainable_parameters());
    }

    #[test]
    fn invalid_output_size_rejected() {
        let cfg = GeneratorConfig { output_size: 20, ..small(BlockKind::Classical) };
        assert!(Generator::new(cfg, &mut seeded(0, 0)).is_err());
    }

    #[test]
    fn wrong_latent_width_is_shape_error() {
        let g = Generator::new(small(BlockKind::Classical), &mut seeded(0, 0)).unwrap();
        assert!(matches!(
            g.forward(&Tensor::zeros(&[2, 4]), Mode::Train),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let run = || {
            let g = Generator::new(small(BlockKind::Quantum), &mut seeded(5, 1)).unwrap();
            g.generate(4, &mut seeded(5, 2), Mode::Train).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn latent_uniform_range() {
        let z = sample_latent(LatentDistribution::Uniform, 50, 5, &mut seeded(2, 0));
        assert!(z.data().iter().all(|v| v.abs() <= FRAC_PI_2));
    }
}
