use rand_distr::{Distribution, StandardNormal};

use super::{GradFn, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Channel layout shared by 2-D `[N, C]` and 4-D `[N, C, H, W]` inputs.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(Error::shape("batch_norm", shape, &[0, 0])),
    }
}

struct BatchNormTrainFn {
    inputs: [Tensor; 3],
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    layout: (usize, usize, usize),
}

impl GradFn for BatchNormTrainFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (n, c, inner) = self.layout;
        let m = (n * inner) as f64;
        let gamma = self.inputs[1].data();
        let mut sum_g = vec![0.0; c];
        let mut sum_g_xhat = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for s in off..off + inner {
                    sum_g[ch] += g[s];
                    sum_g_xhat[ch] += g[s] * self.x_hat[s];
                }
            }
        }
        let gx = self.inputs[0].requires_grad().then(|| {
            let mut gx = vec![0.0; g.len()];
            for b in 0..n {
                for ch in 0..c {
                    let k = gamma[ch] * self.inv_std[ch] / m;
                    let off = (b * c + ch) * inner;
                    for s in off..off + inner {
                        gx[s] = k * (m * g[s] - sum_g[ch] - self.x_hat[s] * sum_g_xhat[ch]);
                    }
                }
            }
            gx
        });
        vec![gx, Some(sum_g_xhat), Some(sum_g)]
    }
}

struct BatchNormEvalFn {
    inputs: [Tensor; 3],
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    layout: (usize, usize, usize),
}

impl GradFn for BatchNormEvalFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (n, c, inner) = self.layout;
        let gamma = self.inputs[1].data();
        let mut gx = vec![0.0; g.len()];
        let mut gg = vec![0.0; c];
        let mut gb = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let k = gamma[ch] * self.inv_std[ch];
                let off = (b * c + ch) * inner;
                for s in off..off + inner {
                    gx[s] = k * g[s];
                    gg[ch] += g[s] * self.x_hat[s];
                    gb[ch] += g[s];
                }
            }
        }
        vec![Some(gx), Some(gg), Some(gb)]
    }
}

/// Batch normalization over the batch (and spatial) axes.
///
/// Train mode normalizes with biased batch statistics and folds the batch
/// mean and unbiased variance into the running buffers with weight
/// `momentum`; eval mode normalizes with the running buffers.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: BatchNormMode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor> {
    let layout @ (n, c, inner) = channel_layout(x.shape())?;
    for t in [gamma, beta, running_mean, running_var] {
        if t.shape() != [c] {
            return Err(Error::shape("batch_norm parameter", t.shape(), &[c]));
        }
    }
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    match mode {
        BatchNormMode::Train => {
            if n < 2 {
                return Err(Error::DegenerateStatistics(format!(
                    "batch norm in train mode needs a batch of at least 2, got {n}"
                )));
            }
            let m = (n * inner) as f64;
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    mean[ch] += xd[off..off + inner].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    var[ch] += xd[off..off + inner]
                        .iter()
                        .map(|v| (v - mean[ch]) * (v - mean[ch]))
                        .sum::<f64>();
                }
            }
            let mut rm = running_mean.data_mut();
            let mut rv = running_var.data_mut();
            for ch in 0..c {
                let unbiased = var[ch] / (m - 1.0);
                var[ch] /= m;
                rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean[ch];
                rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
            }
        }
        BatchNormMode::Eval => {
            mean.copy_from_slice(&running_mean.data());
            var.copy_from_slice(&running_var.data());
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let gd = gamma.data();
    let bd = beta.data();
    let mut x_hat = vec![0.0; xd.len()];
    let mut y = vec![0.0; xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for s in off..off + inner {
                let h = (xd[s] - mean[ch]) * inv_std[ch];
                x_hat[s] = h;
                y[s] = gd[ch] * h + bd[ch];
            }
        }
    }
    drop((xd, gd, bd));
    let inputs = [x.clone(), gamma.clone(), beta.clone()];
    let shape = x.shape().to_vec();
    Ok(match mode {
        BatchNormMode::Train => Tensor::from_op(
            shape,
            y,
            BatchNormTrainFn {
                inputs,
                x_hat,
                inv_std,
                layout,
            },
        ),
        BatchNormMode::Eval => Tensor::from_op(
            shape,
            y,
            BatchNormEvalFn {
                inputs,
                x_hat,
                inv_std,
                layout,
            },
        ),
    })
}

/// Persistent left singular vector estimate for one weight.
#[derive(Debug, Clone)]
pub struct SpectralNormState {
    u: Vec<f64>,
    pub power_iterations: usize,
}

impl SpectralNormState {
    /// Random unit `u` of length `rows`.
    pub fn new(rows: usize, power_iterations: usize, rng: &mut crate::rng::Rng) -> Self {
        assert!(power_iterations >= 1, "power_iterations must be >= 1");
        loop {
            let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
            if normalize(&mut u) {
                return SpectralNormState { u, power_iterations };
            }
        }
    }

    pub fn from_u(mut u: Vec<f64>, power_iterations: usize) -> Result<Self> {
        if !normalize(&mut u) {
            return Err(Error::Config("spectral norm vector u must be nonzero".into()));
        }
        Ok(SpectralNormState {
            u,
            power_iterations: power_iterations.max(1),
        })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }
}

pub struct SpectralNormOutput {
    pub weight: Tensor,
    /// Estimated top singular value. `0.0` when the weight is all zeros.
    pub sigma: f64,
    /// Set when the weight was all zeros and was passed through unchanged.
    pub degenerate: bool,
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// `Wᵀu` for `W` stored as `rows × cols`.
fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        let wr = &w[r * cols..(r + 1) * cols];
        out.iter_mut().zip(wr).for_each(|(o, &x)| *o += u[r] * x);
    }
    out
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

struct SpectralFn {
    inputs: [Tensor; 1],
    u: Vec<f64>,
    v: Vec<f64>,
    sigma: f64,
}

impl GradFn for SpectralFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        // u and v are constants; d(uᵀWv)/dW = u vᵀ.
        let w = self.inputs[0].data();
        let cols = self.v.len();
        let inner: f64 = g.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
        let k = inner / (self.sigma * self.sigma);
        let gw = g
            .iter()
            .enumerate()
            .map(|(i, &gv)| gv / self.sigma - k * self.u[i / cols] * self.v[i % cols])
            .collect();
        vec![Some(gw)]
    }
}

struct IdentityFn {
    inputs: [Tensor; 1],
}

impl GradFn for IdentityFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

/// Divides `w` (flattened to `shape[0] × rest`) by a power-iteration
/// estimate of its top singular value.
///
/// With `update` set, `state.power_iterations` rounds refine `u` in place
/// first; otherwise the stored `u` is used as is. An all-zero weight passes
/// through unchanged with `degenerate` set.
pub fn spectral_normalize(
    w: &Tensor,
    state: &mut SpectralNormState,
    update: bool,
) -> Result<SpectralNormOutput> {
    let rows = *w.shape().first().ok_or_else(|| Error::shape("spectral_normalize", w.shape(), &[0, 0]))?;
    if rows != state.u.len() || rows == 0 {
        return Err(Error::shape("spectral_normalize", w.shape(), &[state.u.len()]));
    }
    let cols = w.numel() / rows;
    let wd = w.data();

    let passthrough = |w: &Tensor| SpectralNormOutput {
        weight: Tensor::from_op(w.shape().to_vec(), w.to_vec(), IdentityFn { inputs: [w.clone()] }),
        sigma: 0.0,
        degenerate: true,
    };

    let mut u = state.u.clone();
    let mut v = mat_t_vec(&wd, rows, cols, &u);
    if !normalize(&mut v) {
        drop(wd);
        return Ok(passthrough(w));
    }
    if update {
        for i in 0..state.power_iterations {
            if i > 0 {
                v = mat_t_vec(&wd, rows, cols, &u);
                if !normalize(&mut v) {
                    drop(wd);
                    return Ok(passthrough(w));
                }
            }
            u = mat_vec(&wd, rows, cols, &v);
            if !normalize(&mut u) {
                drop(wd);
                return Ok(passthrough(w));
            }
        }
        state.u.copy_from_slice(&u);
    }
    let wv = mat_vec(&wd, rows, cols, &v);
    let sigma: f64 = u.iter().zip(&wv).map(|(a, b)| a * b).sum();
    if sigma <= 0.0 || !sigma.is_finite() {
        drop(wd);
        return Ok(passthrough(w));
    }
    let scaled = wd.iter().map(|x| x / sigma).collect();
    drop(wd);
    Ok(SpectralNormOutput {
        weight: Tensor::from_op(
            w.shape().to_vec(),
            scaled,
            SpectralFn {
                inputs: [w.clone()],
                u,
                v,
                sigma,
            },
        ),
        sigma,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn bn(x: &Tensor, gamma: f64, beta: f64, mode: BatchNormMode) -> Result<Tensor> {
        let c = x.shape()[1];
        batch_norm(
            x,
            &Tensor::full(&[c], gamma),
            &Tensor::full(&[c], beta),
            &Tensor::zeros(&[c]),
            &Tensor::full(&[c], 1.0),
            mode,
            0.1,
            1e-5,
        )
    }

    #[test]
    fn constant_feature_maps_to_beta() {
        let x = Tensor::new(&[3, 1], vec![2.5, 2.5, 2.5]).unwrap();
        let y = bn(&x, 4.0, 0.75, BatchNormMode::Train).unwrap();
        assert_eq!(y.to_vec(), vec![0.75; 3]);
    }

    #[test]
    fn train_mode_standardizes() {
        let mut r = rng::seeded(3, 0);
        let x = Tensor::uniform(&[16, 4], -3.0, 5.0, &mut r);
        let xs = x.to_vec();
        let y = bn(&x, 1.0, 0.0, BatchNormMode::Train).unwrap().to_vec();
        let stats = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / 16.0;
            (mean, v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 16.0)
        };
        for c in 0..4 {
            let col: Vec<f64> = (0..16).map(|i| y[i * 4 + c]).collect();
            let raw: Vec<f64> = (0..16).map(|i| xs[i * 4 + c]).collect();
            let (mean, var) = stats(&col);
            let (_, raw_var) = stats(&raw);
            assert!(mean.abs() < 1e-12);
            assert!((var - raw_var / (raw_var + 1e-5)).abs() < 1e-12, "var {var}");
        }
    }

    #[test]
    fn two_sample_hand_formula() {
        // mean 1, biased var 1: x_hat = ∓1/sqrt(1+eps)
        let x = Tensor::new(&[2, 1], vec![0.0, 2.0]).unwrap();
        let y = bn(&x, 3.0, 1.0, BatchNormMode::Train).unwrap().to_vec();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y[0] - (1.0 - 3.0 * s)).abs() < 1e-15);
        assert!((y[1] - (1.0 + 3.0 * s)).abs() < 1e-15);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new(&[2, 1], vec![0.0, 2.0]).unwrap();
        let rm = Tensor::zeros(&[1]);
        let rv = Tensor::full(&[1], 1.0);
        let one = Tensor::full(&[1], 1.0);
        let zero = Tensor::zeros(&[1]);
        batch_norm(&x, &one, &zero, &rm, &rv, BatchNormMode::Train, 0.1, 1e-5).unwrap();
        assert!((rm.item() - 0.1).abs() < 1e-15);
        // unbiased variance of {0, 2} is 2
        assert!((rv.item() - (0.9 + 0.2)).abs() < 1e-15);
        let y = batch_norm(&x, &one, &zero, &rm, &rv, BatchNormMode::Eval, 0.1, 1e-5).unwrap();
        assert!((y.to_vec()[1] - (2.0 - 0.1) / (1.1f64 + 1e-5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn batch_of_one_is_degenerate_in_train_mode() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            bn(&x, 1.0, 0.0, BatchNormMode::Train),
            Err(Error::DegenerateStatistics(_))
        ));
        assert!(bn(&x, 1.0, 0.0, BatchNormMode::Eval).is_ok());
    }

    #[test]
    fn spectral_diag_and_identity() {
        let mut r = rng::seeded(1, 0);
        let w = Tensor::new(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SpectralNormState::new(2, 5, &mut r);
        let out = spectral_normalize(&w, &mut st, true).unwrap();
        assert!((out.sigma - 3.0).abs() < 1e-3);
        assert!((out.weight.to_vec()[0] - 1.0).abs() < 1e-3);

        let eye = Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SpectralNormState::new(3, 5, &mut r);
        let out = spectral_normalize(&eye, &mut st, true).unwrap();
        for (a, b) in out.weight.to_vec().iter().zip(eye.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_zero_weight_is_flagged() {
        let mut r = rng::seeded(1, 0);
        let w = Tensor::zeros(&[2, 3]);
        let mut st = SpectralNormState::new(2, 1, &mut r);
        let u_before = st.u().to_vec();
        let out = spectral_normalize(&w, &mut st, true).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.weight.to_vec(), vec![0.0; 6]);
        assert_eq!(st.u(), &u_before[..]);
    }

    #[test]
    fn u_stays_unit_after_updates() {
        let mut r = rng::seeded(9, 0);
        let w = Tensor::uniform(&[5, 7], -1.0, 1.0, &mut r);
        let mut st = SpectralNormState::new(5, 1, &mut r);
        for _ in 0..10 {
            spectral_normalize(&w, &mut st, true).unwrap();
            let n = st.u().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-8);
        }
    }
}
