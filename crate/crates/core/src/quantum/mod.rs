//! Statevector simulation of the variational block.
//!
//! Circuit per sample, on `n` qubits starting from `|0…0⟩`:
//!
//! 1. `RY(z_i)` on qubit `i` (angle encoding),
//! 2. `CNOT(i → i+1)` for `i = 0 … n-2`, ascending,
//! 3. `RX(θ_i0) RY(θ_i1) RZ(θ_i2)` on every qubit `i`,
//! 4. `⟨Z_i⟩` on every qubit.
//!
//! Qubit `i` is bit `i` of the basis-state index (qubit 0 least significant).
//! Gradients use the two-term parameter-shift rule, which is exact for
//! every rotation in the circuit.

mod layer;
mod oracle;

use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use layer::QuantumLayer;
pub use oracle::dense_unitary_oracle;

pub const MAX_QUBITS: usize = 12;
pub const SHIFT: f64 = std::f64::consts::FRAC_PI_2;

/// 2×2 unitary, row-major.
pub type Gate = [[Complex64; 2]; 2];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rx(phi: f64) -> Gate {
    let (s, co) = (phi / 2.0).sin_cos();
    [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]]
}

pub fn ry(phi: f64) -> Gate {
    let (s, co) = (phi / 2.0).sin_cos();
    [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]]
}

pub fn rz(phi: f64) -> Gate {
    let (s, co) = (phi / 2.0).sin_cos();
    [[c(co, -s), c(0.0, 0.0)], [c(0.0, 0.0), c(co, s)]]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count must be in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Statevector { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn apply(&mut self, qubit: usize, gate: &Gate) {
        assert!(qubit < self.n_qubits);
        let stride = 1usize << qubit;
        let len = self.amplitudes.len();
        let mut block = 0;
        while block < len {
            for i in block..block + stride {
                let a = self.amplitudes[i];
                let b = self.amplitudes[i + stride];
                self.amplitudes[i] = gate[0][0] * a + gate[0][1] * b;
                self.amplitudes[i + stride] = gate[1][0] * a + gate[1][1] * b;
            }
            block += 2 * stride;
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        assert!(control < self.n_qubits && target < self.n_qubits && control != target);
        let (cm, tm) = (1usize << control, 1usize << target);
        for i in 0..self.amplitudes.len() {
            if i & cm != 0 && i & tm == 0 {
                self.amplitudes.swap(i, i | tm);
            }
        }
    }

    /// `⟨Z_q⟩ = P(q = 0) − P(q = 1)` for every qubit.
    pub fn expectations_z(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits];
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, o) in out.iter_mut().enumerate() {
                if i >> q & 1 == 0 {
                    *o += p;
                } else {
                    *o -= p;
                }
            }
        }
        out
    }
}

/// Trainable rotation angles, `n_qubits × 3` row-major: `(RX, RY, RZ)` per qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitParams {
    n_qubits: usize,
    theta: Vec<f64>,
}

impl CircuitParams {
    pub fn new(n_qubits: usize, theta: Vec<f64>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Config(format!(
                "qubit count must be in 1..={MAX_QUBITS}, got {n_qubits}"
            )));
        }
        if theta.len() != 3 * n_qubits {
            return Err(Error::shape("CircuitParams", &[theta.len()], &[n_qubits, 3]));
        }
        Ok(CircuitParams { n_qubits, theta })
    }

    pub fn zeros(n_qubits: usize) -> Result<Self> {
        Self::new(n_qubits, vec![0.0; 3 * n_qubits])
    }

    /// Uniform on `[-π/4, π/4]`.
    pub fn random(n_qubits: usize, rng: &mut crate::rng::Rng) -> Result<Self> {
        let r = std::f64::consts::FRAC_PI_4;
        Self::new(n_qubits, (0..3 * n_qubits).map(|_| rng.random_range(-r..=r)).collect())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn parameter_count(&self) -> usize {
        self.theta.len()
    }
}

/// Per-qubit Pauli-Z expectations, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationVector(pub Vec<f64>);

/// Final state of the circuit for one sample.
pub fn simulate(z: &[f64], theta: &[f64]) -> Result<Statevector> {
    let n = z.len();
    if theta.len() != 3 * n {
        return Err(Error::shape("simulate", &[n], &[theta.len() / 3, 3]));
    }
    let mut psi = Statevector::zero_state(n)?;
    for (q, &angle) in z.iter().enumerate() {
        psi.apply(q, &ry(angle));
    }
    for q in 0..n.saturating_sub(1) {
        psi.apply_cnot(q, q + 1);
    }
    for q in 0..n {
        psi.apply(q, &rx(theta[3 * q]));
        psi.apply(q, &ry(theta[3 * q + 1]));
        psi.apply(q, &rz(theta[3 * q + 2]));
    }
    Ok(psi)
}

pub fn expectations(z: &[f64], theta: &CircuitParams) -> Result<ExpectationVector> {
    if z.len() != theta.n_qubits {
        return Err(Error::shape("expectations", &[z.len()], &[theta.n_qubits]));
    }
    Ok(ExpectationVector(simulate(z, &theta.theta)?.expectations_z()))
}

fn check_batch(z_batch: &Tensor, n_qubits: usize) -> Result<usize> {
    let s = z_batch.shape();
    if s.len() != 2 || s[1] != n_qubits {
        return Err(Error::shape("quantum block input", s, &[s.first().copied().unwrap_or(0), n_qubits]));
    }
    Ok(s[0])
}

/// Row-wise circuit evaluation of `[N, n]` encoding angles. No graph is recorded;
/// see [`QuantumLayer`] for the differentiable version.
pub fn quantum_block_forward(z_batch: &Tensor, theta: &CircuitParams) -> Result<Tensor> {
    let n = theta.n_qubits;
    let rows = check_batch(z_batch, n)?;
    let z = z_batch.data();
    let mut out = Vec::with_capacity(rows * n);
    for row in z.chunks(n) {
        out.extend(simulate(row, &theta.theta)?.expectations_z());
    }
    Tensor::new(&[rows, n], out)
}

/// Gradients of `Σ upstream ⊙ block(z, θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftGradients {
    /// `n × 3`, summed over the batch.
    pub grad_theta: Vec<f64>,
    /// `N × n`, per sample.
    pub grad_z: Vec<f64>,
}

/// Parameter-shift gradients for every encoding and trainable angle:
/// `∂⟨Z_j⟩/∂φ = [f(φ + π/2) − f(φ − π/2)] / 2`.
pub fn parameter_shift_gradients(
    z_batch: &Tensor,
    theta: &CircuitParams,
    upstream: &Tensor,
) -> Result<ShiftGradients> {
    let n = theta.n_qubits;
    let rows = check_batch(z_batch, n)?;
    if upstream.shape() != z_batch.shape() {
        return Err(Error::shape("parameter_shift upstream", upstream.shape(), z_batch.shape()));
    }
    let z = z_batch.data();
    let up = upstream.data();
    Ok(shift_gradients_raw(&z, rows, &theta.theta, &up))
}

pub(crate) fn shift_gradients_raw(z: &[f64], rows: usize, theta: &[f64], up: &[f64]) -> ShiftGradients {
    let n = theta.len() / 3;
    let mut grad_theta = vec![0.0; 3 * n];
    let mut grad_z = vec![0.0; rows * n];
    let mut zs = vec![0.0; n];
    let mut ts = theta.to_vec();
    let contract = |plus: &[f64], minus: &[f64], u: &[f64]| -> f64 {
        plus.iter()
            .zip(minus)
            .zip(u)
            .map(|((p, m), u)| u * (p - m) / 2.0)
            .sum()
    };
    for r in 0..rows {
        let zr = &z[r * n..(r + 1) * n];
        let ur = &up[r * n..(r + 1) * n];
        zs.copy_from_slice(zr);
        for i in 0..n {
            zs[i] = zr[i] + SHIFT;
            let plus = simulate(&zs, theta).expect("validated").expectations_z();
            zs[i] = zr[i] - SHIFT;
            let minus = simulate(&zs, theta).expect("validated").expectations_z();
            zs[i] = zr[i];
            grad_z[r * n + i] = contract(&plus, &minus, ur);
        }
        for k in 0..3 * n {
            ts[k] = theta[k] + SHIFT;
            let plus = simulate(zr, &ts).expect("validated").expectations_z();
            ts[k] = theta[k] - SHIFT;
            let minus = simulate(zr, &ts).expect("validated").expectations_z();
            ts[k] = theta[k];
            grad_theta[k] += contract(&plus, &minus, ur);
        }
    }
    ShiftGradients { grad_theta, grad_z }
}
