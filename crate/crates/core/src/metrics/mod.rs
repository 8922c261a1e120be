//! FID, KID and IS over features from a pluggable extractor.

mod extractor;
mod linalg;

use std::fmt;

use crate::error::{Error, Result};

pub use extractor::{extract_features, BackboneExtractor, FeatureExtractor};
pub use linalg::{matrix_sqrt_psd, symmetric_eigen, Matrix, SymmetricEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Real,
    Generated,
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSource::Real => "real",
            FeatureSource::Generated => "generated",
        })
    }
}

/// `rows × dim` features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub source: FeatureSource,
    pub extractor_id: String,
}

impl FeatureSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, source: FeatureSource, extractor_id: impl Into<String>) -> Result<Self> {
        if dim == 0 || data.len() != rows * dim {
            return Err(Error::shape("feature set", &[data.len()], &[rows, dim]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric("feature set contains non-finite entries".into()));
        }
        Ok(FeatureSet {
            rows,
            dim,
            data,
            source,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for i in 0..self.rows {
            for (m, v) in mu.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= self.rows as f64);
        mu
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Matrix {
        let d = self.dim;
        let mu = self.mean();
        let centered: Vec<f64> = (0..self.rows)
            .flat_map(|i| self.row(i).iter().zip(&mu).map(|(v, m)| v - m).collect::<Vec<_>>())
            .collect();
        let mut cov = vec![0.0; d * d];
        crate::tensor::gemm(d, self.rows, d, &centered, true, &centered, false, 0.0, &mut cov);
        let scale = 1.0 / (self.rows as f64 - 1.0);
        cov.iter_mut().for_each(|c| *c *= scale);
        let mut m = Matrix { n: d, data: cov };
        // gemm accumulation order can leave ulp-level asymmetry
        for i in 0..d {
            for j in i + 1..d {
                let v = 0.5 * (m.data[i * d + j] + m.data[j * d + i]);
                m.data[i * d + j] = v;
                m.data[j * d + i] = v;
            }
        }
        m
    }
}

fn check_pair(a: &FeatureSet, b: &FeatureSet, what: &str) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::shape("metric feature dims", &[a.dim], &[b.dim]));
    }
    if a.extractor_id != b.extractor_id {
        return Err(Error::Metric(format!(
            "{what}: feature sets come from different extractors (`{}` vs `{}`)",
            a.extractor_id, b.extractor_id
        )));
    }
    if a.rows < 2 || b.rows < 2 {
        return Err(Error::Metric(format!(
            "{what} needs at least 2 samples per set, got {} and {}",
            a.rows, b.rows
        )));
    }
    Ok(())
}

/// `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2 (Σ_r^{1/2} Σ_g Σ_r^{1/2})^{1/2})`, clipped at 0.
pub fn fid(real: &FeatureSet, generated: &FeatureSet) -> Result<f64> {
    check_pair(real, generated, "FID")?;
    let mr = real.mean();
    let mg = generated.mean();
    let mean_term: f64 = mr.iter().zip(&mg).map(|(a, b)| (a - b) * (a - b)).sum();
    let sr = real.covariance();
    let sg = generated.covariance();
    let root_r = matrix_sqrt_psd(&sr)?;
    let inner = root_r.matmul(&sg).matmul(&root_r);
    let inner = Matrix {
        n: inner.n,
        data: {
            let n = inner.n;
            let mut d = inner.data.clone();
            for i in 0..n {
                for j in i + 1..n {
                    let v = 0.5 * (d[i * n + j] + d[j * n + i]);
                    d[i * n + j] = v;
                    d[j * n + i] = v;
                }
            }
            d
        },
    };
    let tr_root: f64 = symmetric_eigen(&inner)?.values.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = mean_term + sr.trace() + sg.trace() - 2.0 * tr_root;
    if value < -1e-6 {
        log::warn!("FID evaluated to {value:e}; clipped to 0");
    }
    Ok(value.max(0.0))
}

/// `(aᵀb / d + 1)³`.
pub fn polynomial_kernel(a: &[f64], b: &[f64]) -> f64 {
    let d = a.len() as f64;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / d + 1.0).powi(3)
}

fn within_sum(x: &FeatureSet) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows {
        for j in i + 1..x.rows {
            s += polynomial_kernel(x.row(i), x.row(j));
        }
    }
    2.0 * s
}

fn cross_sum(x: &FeatureSet, y: &FeatureSet) -> f64 {
    let mut s = 0.0;
    for i in 0..x.rows {
        for j in 0..y.rows {
            s += polynomial_kernel(x.row(i), y.row(j));
        }
    }
    s
}

/// Unbiased squared MMD with the cubic polynomial kernel.
pub fn kid(real: &FeatureSet, generated: &FeatureSet) -> Result<f64> {
    check_pair(real, generated, "KID")?;
    let (n, m) = (real.rows as f64, generated.rows as f64);
    let xx = within_sum(real) / (n * (n - 1.0));
    let yy = within_sum(generated) / (m * (m - 1.0));
    // evaluated in a fixed orientation so kid(x, y) == kid(y, x) bit for bit
    let xy = if real.data <= generated.data {
        cross_sum(real, generated)
    } else {
        cross_sum(generated, real)
    };
    Ok(xx + yy - 2.0 * xy / (n * m))
}

/// KID over `blocks` contiguous equal blocks: `(mean, std)`.
pub fn kid_blocks(real: &FeatureSet, generated: &FeatureSet, blocks: usize) -> Result<(f64, f64)> {
    if blocks == 0 {
        return Err(Error::Config("kid_blocks needs at least one block".into()));
    }
    let bn = real.rows / blocks;
    let bm = generated.rows / blocks;
    let slice = |f: &FeatureSet, b: usize, len: usize| FeatureSet {
        rows: len,
        data: f.data[b * len * f.dim..(b + 1) * len * f.dim].to_vec(),
        ..f.clone()
    };
    let values = (0..blocks)
        .map(|b| kid(&slice(real, b, bn), &slice(generated, b, bm)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_std(&values))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Row-stochastic `rows × classes` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    pub rows: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl ClassProbabilities {
    pub fn new(rows: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || data.len() != rows * classes {
            return Err(Error::shape("class probabilities", &[data.len()], &[rows, classes]));
        }
        for (i, row) in data.chunks(classes).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-8 {
                return Err(Error::Metric(format!("row {i} is not a probability vector (sum {s})")));
            }
        }
        Ok(ClassProbabilities { rows, classes, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }
}

/// `exp(mean_x KL(p(y|x) ‖ p̄(y)))` per contiguous split: `(mean, std)`.
pub fn inception_score(probs: &ClassProbabilities, splits: usize) -> Result<(f64, f64)> {
    if probs.rows == 0 {
        return Err(Error::Metric("inception score of zero rows".into()));
    }
    if splits == 0 || splits > probs.rows {
        return Err(Error::Config(format!(
            "inception score splits must be in 1..={}, got {splits}",
            probs.rows
        )));
    }
    let c = probs.classes;
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let lo = s * probs.rows / splits;
        let hi = (s + 1) * probs.rows / splits;
        let count = (hi - lo) as f64;
        let mut marginal = vec![0.0; c];
        for i in lo..hi {
            for (m, p) in marginal.iter_mut().zip(probs.row(i)) {
                *m += p;
            }
        }
        marginal.iter_mut().for_each(|m| *m /= count);
        let mut kl = 0.0;
        for i in lo..hi {
            for (p, m) in probs.row(i).iter().zip(&marginal) {
                if *p > 0.0 {
                    kl += p * (p.ln() - m.ln());
                }
            }
        }
        scores.push((kl / count).exp());
    }
    Ok(mean_std(&scores))
}

/// One evaluation's scores and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fid: f64,
    pub kid: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub extractor_id: String,
    pub n_eval: usize,
}
