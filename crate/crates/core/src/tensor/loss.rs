use super::{GradFn, Tensor};
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct BceFn {
    inputs: [Tensor; 1],
    targets: Vec<f64>,
}

impl GradFn for BceFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = self.targets.len() as f64;
        let gx = self.inputs[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&x, &t)| g[0] * (sigmoid(x) - t) / n)
            .collect();
        vec![Some(gx)]
    }
}

/// Mean binary cross-entropy on raw logits, in the overflow-free form
/// `max(x, 0) - x t + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(logits: &Tensor, targets: &[f64]) -> Result<Tensor> {
    if logits.numel() != targets.len() || targets.is_empty() {
        return Err(Error::shape("bce_with_logits", logits.shape(), &[targets.len()]));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Usage(format!("bce_with_logits targets must be 0 or 1, got {t}")));
    }
    let n = targets.len() as f64;
    let loss = logits
        .data()
        .iter()
        .zip(targets)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        BceFn {
            inputs: [logits.clone()],
            targets: targets.to_vec(),
        },
    ))
}

struct CrossEntropyFn {
    inputs: [Tensor; 1],
    probs: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl GradFn for CrossEntropyFn {
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len() as f64;
        let mut gx: Vec<f64> = self.probs.iter().map(|p| g[0] * p / n).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            gx[i * self.classes + l] -= g[0] / n;
        }
        vec![Some(gx)]
    }
}

/// Row-wise softmax of a `[N, C]` logit matrix.
pub(crate) fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - m).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    out
}

/// Mean softmax cross-entropy of `[N, C]` logits against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || labels.is_empty() {
        return Err(Error::shape("cross_entropy", s, &[labels.len()]));
    }
    let classes = s[1];
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Usage(format!("label {l} out of range for {classes} classes")));
    }
    let probs = softmax_rows(&logits.data(), classes);
    let loss = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[i * classes + l].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / labels.len() as f64;
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        CrossEntropyFn {
            inputs: [logits.clone()],
            probs,
            labels: labels.to_vec(),
            classes,
        },
    ))
}
