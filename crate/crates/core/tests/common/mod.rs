#![allow(dead_code)]

use hqgan::tensor::no_grad;
use hqgan::Tensor;

/// Largest error between backprop and central differences over every
/// element of `params`, as `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck(params: &[Tensor], f: impl Fn() -> Tensor, h: f64, floor: f64) -> f64 {
    for p in params {
        p.zero_grad();
    }
    f().backward().expect("scalar loss");
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let mut worst = 0.0f64;
    for (p, grad) in params.iter().zip(&analytic) {
        for i in 0..p.numel() {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + h;
            let up = no_grad(|| f().item());
            p.data_mut()[i] = orig - h;
            let down = no_grad(|| f().item());
            p.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// Weighted sum `Σ c_i y_i` with fixed pseudo-random coefficients, so every
/// output element contributes a distinct upstream gradient.
pub fn probe(y: &Tensor) -> Tensor {
    let coeffs: Vec<f64> = (0..y.numel()).map(|i| ((i * 7919 % 113) as f64 / 56.5) - 1.0).collect();
    let c = Tensor::new(y.shape(), coeffs).unwrap();
    hqgan::tensor::sum(&hqgan::tensor::mul(y, &c).unwrap())
}

/// Writes a full-size CIFAR-10 binary layout into `dir`. Record `i` of every
/// file has label `i % 10` and pixel `j` equal to `(i + j) % 256`.
pub fn write_cifar_fixture(dir: &std::path::Path) {
    use hqgan::data::*;
    let mut bytes = Vec::with_capacity(CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES);
    for i in 0..CIFAR_RECORDS_PER_FILE {
        bytes.push((i % 10) as u8);
        bytes.extend((0..CIFAR_IMAGE_BYTES).map(|j| ((i + j) % 256) as u8));
    }
    for name in CIFAR_TRAIN_FILES.iter().chain([&CIFAR_TEST_FILE]) {
        std::fs::write(dir.join(name), &bytes).unwrap();
    }
}

/// The real dataset directory, if `HQGAN_DATA_DIR` points at one.
pub fn real_cifar_dir() -> Option<std::path::PathBuf> {
    let dir = std::path::PathBuf::from(std::env::var_os("HQGAN_DATA_DIR")?);
    let found = [dir.join("data_batch_1.bin"), dir.join("cifar-10-batches-bin/data_batch_1.bin")]
        .iter()
        .any(|p| p.is_file());
    found.then_some(dir)
}
