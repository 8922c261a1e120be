//! Parameterized layers on top of the tensor ops, plus the naming scheme used
//! for weight persistence.

use std::fmt::Write as _;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{self, BatchNormMode, SpectralNormState, Tensor};

/// Standard deviation of the normal weight initialization.
pub const INIT_STD: f64 = 0.02;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn batch_norm(self) -> BatchNormMode {
        match self {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Buffer,
}

/// Anything holding named tensors.
pub trait Module {
    /// Visits every tensor in a stable registration order.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        let mut s = String::with_capacity(prefix.len() + name.len() + 1);
        let _ = write!(s, "{prefix}.{name}");
        s
    }
}

pub fn named_tensors(m: &dyn Module) -> Vec<(String, Tensor, Role)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, t, role| out.push((name.to_string(), t.clone(), role)));
    out
}

pub fn parameters(m: &dyn Module) -> Vec<Tensor> {
    let mut out = Vec::new();
    m.visit("", &mut |_, t, role| {
        if role == Role::Parameter {
            out.push(t.clone());
        }
    });
    out
}

/// Exact number of trainable scalars.
pub fn count_trainable(m: &dyn Module) -> usize {
    parameters(m).iter().map(Tensor::numel).sum()
}

pub fn zero_grad(m: &dyn Module) {
    m.visit("", &mut |_, t, _| t.zero_grad());
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        Linear {
            weight: Tensor::randn_param(&[out_dim, in_dim], INIT_STD, rng),
            bias: bias.then(|| Tensor::param(&[out_dim], vec![0.0; out_dim]).expect("shape")),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::linear(x, &self.weight, self.bias.as_ref())
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "weight"), &self.weight, Role::Parameter);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, Role::Parameter);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Same-padding convolution for odd `kernel`.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        Conv2d {
            weight: Tensor::randn_param(&[out_channels, in_channels, kernel, kernel], INIT_STD, rng),
            bias: bias.then(|| Tensor::param(&[out_channels], vec![0.0; out_channels]).expect("shape")),
            stride,
            padding: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "weight"), &self.weight, Role::Parameter);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, Role::Parameter);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(&[features], vec![1.0; features]).expect("shape"),
            beta: Tensor::param(&[features], vec![0.0; features]).expect("shape"),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        tensor::batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode.batch_norm(),
            BN_MOMENTUM,
            BN_EPS,
        )
    }
}

impl Module for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "weight"), &self.gamma, Role::Parameter);
        f(&join(prefix, "bias"), &self.beta, Role::Parameter);
        f(&join(prefix, "running_mean"), &self.running_mean, Role::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, Role::Buffer);
    }
}

/// Convolution whose weight is spectrally normalized on every forward pass.
/// The singular-vector estimate `u` is a persisted buffer (`weight_u`).
#[derive(Debug, Clone)]
pub struct SpectralConv2d {
    pub conv: Conv2d,
    pub u: Tensor,
    pub power_iterations: usize,
    /// When false, train-mode passes reuse `u` without refining it.
    pub update_u: std::cell::Cell<bool>,
}

impl SpectralConv2d {
    pub fn new(conv: Conv2d, power_iterations: usize, rng: &mut Rng) -> Self {
        let rows = conv.out_channels();
        let state = SpectralNormState::new(rows, power_iterations, rng);
        SpectralConv2d {
            conv,
            u: Tensor::new(&[rows], state.u().to_vec()).expect("shape"),
            power_iterations,
            update_u: std::cell::Cell::new(true),
        }
    }

    /// Normalized weight for this pass; refines `u` only in train mode.
    pub fn normalized_weight(&self, mode: Mode) -> Result<Tensor> {
        let mut state = SpectralNormState::from_u(self.u.to_vec(), self.power_iterations)?;
        let update = mode == Mode::Train && self.update_u.get();
        let out = tensor::spectral_normalize(&self.conv.weight, &mut state, update)?;
        if out.degenerate {
            log::warn!("spectral norm: all-zero weight passed through unnormalized");
        }
        if update {
            self.u.data_mut().copy_from_slice(state.u());
        }
        Ok(out.weight)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = self.normalized_weight(mode)?;
        tensor::conv2d(x, &w, self.conv.bias.as_ref(), self.conv.stride, self.conv.padding)
    }
}

impl Module for SpectralConv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.conv.visit(prefix, f);
        f(&join(prefix, "weight_u"), &self.u, Role::Buffer);
    }
}
