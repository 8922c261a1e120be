use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single parameter buffer. `step` is the
/// 1-based step index after incrementing.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step_count: u64,
    shapes: Vec<Vec<usize>>,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Result<Self> {
        if !(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 && config.beta2 < 1.0) {
            return Err(Error::Config(format!(
                "Adam betas must lie in (0, 1), got ({}, {})",
                config.beta1, config.beta2
            )));
        }
        if !(config.learning_rate > 0.0 && config.epsilon > 0.0) {
            return Err(Error::Config("Adam learning rate and epsilon must be positive".into()));
        }
        Ok(Adam {
            config,
            step_count: 0,
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            first_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update using each parameter's accumulated gradient.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(Error::Usage(format!(
                "Adam tracks {} parameters, step got {}",
                self.shapes.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&self.shapes) {
            if p.shape() != &s[..] {
                return Err(Error::shape("adam_step", p.shape(), s));
            }
        }
        self.step_count += 1;
        for (i, p) in params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            adam_update(
                &mut p.data_mut(),
                &grad,
                &mut self.first_moment[i],
                &mut self.second_moment[i],
                self.step_count,
                &self.config,
            );
        }
        Ok(())
    }
}
