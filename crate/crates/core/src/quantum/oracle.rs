//! Dense-matrix reference for the variational circuit.
//!
//! Builds every gate as a full `2^n × 2^n` operator from Kronecker products,
//! multiplies them into the circuit unitary and evaluates `⟨ψ|Z_i|ψ⟩`
//! directly. Shares nothing with the statevector path except the 2×2 gate
//! definitions.

use num_complex::Complex64;

use super::{rx, ry, rz, CircuitParams, ExpectationVector, Gate};
use crate::error::{Error, Result};

pub const ORACLE_MAX_QUBITS: usize = 6;

#[derive(Clone)]
struct Dense {
    dim: usize,
    m: Vec<Complex64>,
}

impl Dense {
    fn identity(dim: usize) -> Self {
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            m[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        Dense { dim, m }
    }

    fn from_gate(g: &Gate) -> Self {
        Dense {
            dim: 2,
            m: vec![g[0][0], g[0][1], g[1][0], g[1][1]],
        }
    }

    fn kron(&self, other: &Dense) -> Dense {
        let dim = self.dim * other.dim;
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i1 in 0..self.dim {
            for j1 in 0..self.dim {
                let a = self.m[i1 * self.dim + j1];
                for i2 in 0..other.dim {
                    for j2 in 0..other.dim {
                        m[(i1 * other.dim + i2) * dim + j1 * other.dim + j2] =
                            a * other.m[i2 * other.dim + j2];
                    }
                }
            }
        }
        Dense { dim, m }
    }

    fn matmul(&self, other: &Dense) -> Dense {
        let d = self.dim;
        let mut m = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..d {
                    s += self.m[i * d + k] * other.m[k * d + j];
                }
                m[i * d + j] = s;
            }
        }
        Dense { dim: d, m }
    }

    fn add(&self, other: &Dense) -> Dense {
        Dense {
            dim: self.dim,
            m: self.m.iter().zip(&other.m).map(|(a, b)| a + b).collect(),
        }
    }
}

/// `⊗` over qubits from the most significant (n-1) down to qubit 0, with
/// `pick(q)` supplying each factor.
fn embed(n: usize, pick: impl Fn(usize) -> Dense) -> Dense {
    let mut acc = pick(n - 1);
    for q in (0..n - 1).rev() {
        acc = acc.kron(&pick(q));
    }
    acc
}

fn single(n: usize, qubit: usize, g: &Gate) -> Dense {
    embed(n, |q| if q == qubit { Dense::from_gate(g) } else { Dense::identity(2) })
}

fn cnot(n: usize, control: usize, target: usize) -> Dense {
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let p0 = Dense { dim: 2, m: vec![one, zero, zero, zero] };
    let p1 = Dense { dim: 2, m: vec![zero, zero, zero, one] };
    let x = Dense { dim: 2, m: vec![zero, one, one, zero] };
    let keep = embed(n, |q| if q == control { p0.clone() } else { Dense::identity(2) });
    let flip = embed(n, |q| {
        if q == control {
            p1.clone()
        } else if q == target {
            x.clone()
        } else {
            Dense::identity(2)
        }
    });
    keep.add(&flip)
}

fn pauli_z(n: usize, qubit: usize) -> Dense {
    let zero = Complex64::new(0.0, 0.0);
    let z = Dense {
        dim: 2,
        m: vec![Complex64::new(1.0, 0.0), zero, zero, Complex64::new(-1.0, 0.0)],
    };
    embed(n, |q| if q == qubit { z.clone() } else { Dense::identity(2) })
}

/// Reference expectations for `n ≤ 6` qubits.
pub fn dense_unitary_oracle(n: usize, z: &[f64], theta: &CircuitParams) -> Result<ExpectationVector> {
    if n > ORACLE_MAX_QUBITS {
        return Err(Error::Refused(format!(
            "dense oracle builds 2^n x 2^n matrices; n = {n} exceeds {ORACLE_MAX_QUBITS}"
        )));
    }
    if n == 0 || z.len() != n || theta.n_qubits() != n {
        return Err(Error::shape("dense_unitary_oracle", &[z.len(), theta.n_qubits()], &[n]));
    }
    let t = theta.as_slice();
    // gates in application order; U = G_last ⋯ G_first
    let mut gates = Vec::new();
    for (q, &a) in z.iter().enumerate() {
        gates.push(single(n, q, &ry(a)));
    }
    for q in 0..n - 1 {
        gates.push(cnot(n, q, q + 1));
    }
    for q in 0..n {
        gates.push(single(n, q, &rx(t[3 * q])));
        gates.push(single(n, q, &ry(t[3 * q + 1])));
        gates.push(single(n, q, &rz(t[3 * q + 2])));
    }
    let dim = 1usize << n;
    let mut u = Dense::identity(dim);
    for g in &gates {
        u = g.matmul(&u);
    }
    // ψ = U e₀ is the first column of U.
    let psi: Vec<Complex64> = (0..dim).map(|i| u.m[i * dim]).collect();
    let values = (0..n)
        .map(|q| {
            let zq = pauli_z(n, q);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..dim {
                for j in 0..dim {
                    acc += psi[i].conj() * zq.m[i * dim + j] * psi[j];
                }
            }
            acc.re
        })
        .collect();
    Ok(ExpectationVector(values))
}
