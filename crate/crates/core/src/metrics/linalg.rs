//! Dense symmetric eigensolver (cyclic Jacobi) and the PSD square root.

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("matrix", &[data.len()], &[n, n]));
        }
        Ok(Matrix { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { n, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix { n, data: vec![0.0; n * n] };
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        crate::tensor::gemm(n, n, n, &self.data, false, &other.data, false, 0.0, &mut out);
        Matrix { n, data: out }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn symmetrized(&self) -> Matrix {
        let n = self.n;
        let mut m = self.clone();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }
}

/// Eigenvalues and column eigenvectors (`vectors[i * n + k]` is component `i`
/// of eigenvector `k`).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    let scale = a.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asym = a.max_asymmetry();
    if !asym.is_finite() || asym > SYMMETRY_TOL * scale {
        return Err(Error::Metric(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    Ok(())
}

pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(a)?;
    let n = a.n;
    let mut m = a.symmetrized().data;
    let mut v = Matrix::identity(n).data;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let total: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymmetricEigen {
        values: (0..n).map(|i| m[i * n + i]).collect(),
        vectors: Matrix { n, data: v },
    })
}

/// `V diag(f(λ)) Vᵀ`.
fn spectral_map(e: &SymmetricEigen, f: impl Fn(f64) -> f64) -> Matrix {
    let n = e.vectors.n;
    let mapped: Vec<f64> = e.values.iter().map(|&l| f(l)).collect();
    let mut scaled = e.vectors.data.clone();
    for i in 0..n {
        for k in 0..n {
            scaled[i * n + k] *= mapped[k];
        }
    }
    let mut out = vec![0.0; n * n];
    crate::tensor::gemm(n, n, n, &scaled, false, &e.vectors.data, true, 0.0, &mut out);
    Matrix { n, data: out }.symmetrized()
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// (numerical noise) are clipped to zero.
pub fn matrix_sqrt_psd(a: &Matrix) -> Result<Matrix> {
    let e = symmetric_eigen(a)?;
    Ok(spectral_map(&e, |l| l.max(0.0).sqrt()))
}
