//! Backprop versus central finite differences for every op and for the
//! reduced-width networks.

mod common;

use common::{gradcheck, probe};
use hqgan::discriminator::{Backbone, BackboneConfig, Discriminator, HeadConfig, HeadKind};
use hqgan::generator::{BlockKind, Generator, GeneratorConfig};
use hqgan::nn::{self, Mode};
use hqgan::quantum::QuantumLayer;
use hqgan::rng::{self, Rng};
use hqgan::tensor::{self, BatchNormMode, SpectralNormState};
use hqgan::Tensor;
use rand::Rng as _;

const TOL: f64 = 1e-5;
const H: f64 = 1e-6;
const FLOOR: f64 = 1e-3;

fn param(shape: &[usize], lo: f64, hi: f64, r: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn check(name: &str, params: &[Tensor], f: impl Fn() -> Tensor) {
    let err = gradcheck(params, f, H, FLOOR);
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn elementwise_and_shape_ops() {
    let mut r = rng::seeded(1, 0);
    let a = param(&[3, 4], -2.0, 2.0, &mut r);
    let b = param(&[3, 4], -2.0, 2.0, &mut r);
    check("add", &[a.clone(), b.clone()], || probe(&tensor::add(&a, &b).unwrap()));
    check("mul", &[a.clone(), b.clone()], || probe(&tensor::mul(&a, &b).unwrap()));
    check("relu", &[a.clone()], || probe(&tensor::relu(&a)));
    check("tanh", &[a.clone()], || probe(&tensor::tanh(&a)));
    check("reshape", &[a.clone()], || probe(&tensor::reshape(&a, &[2, 6]).unwrap()));
    check("sum", &[a.clone()], || tensor::sum(&tensor::mul(&a, &a).unwrap()));
}

#[test]
fn linear_layer() {
    let mut r = rng::seeded(2, 0);
    let x = param(&[4, 5], -1.0, 1.0, &mut r);
    let w = param(&[3, 5], -1.0, 1.0, &mut r);
    let b = param(&[3], -1.0, 1.0, &mut r);
    check("linear", &[x.clone(), w.clone(), b.clone()], || {
        probe(&tensor::linear(&x, &w, Some(&b)).unwrap())
    });
}

#[test]
fn pooling_and_upsampling() {
    let mut r = rng::seeded(3, 0);
    let x = param(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
    check("global_avg_pool", &[x.clone()], || probe(&tensor::global_avg_pool(&x).unwrap()));
    check("upsample", &[x.clone()], || probe(&tensor::upsample_nearest2x(&x).unwrap()));
}

#[test]
fn convolutions() {
    let mut r = rng::seeded(4, 0);
    let x = param(&[2, 3, 5, 5], -1.0, 1.0, &mut r);
    let w3 = param(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let w1 = param(&[4, 3, 1, 1], -0.5, 0.5, &mut r);
    let b = param(&[4], -0.5, 0.5, &mut r);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        check(&format!("conv3x3 s{stride} p{pad}"), &[x.clone(), w3.clone(), b.clone()], || {
            probe(&tensor::conv2d(&x, &w3, Some(&b), stride, pad).unwrap())
        });
    }
    check("conv1x1 s2", &[x.clone(), w1.clone()], || {
        probe(&tensor::conv2d(&x, &w1, None, 2, 0).unwrap())
    });
}

#[test]
fn batch_norm_modes() {
    let mut r = rng::seeded(5, 0);
    for shape in [vec![6, 3], vec![3, 2, 3, 3]] {
        let c = shape[1];
        let x = param(&shape, -2.0, 2.0, &mut r);
        let gamma = param(&[c], 0.5, 1.5, &mut r);
        let beta = param(&[c], -0.5, 0.5, &mut r);
        let rm = Tensor::new(&[c], vec![0.1; c]).unwrap();
        let rv = Tensor::new(&[c], vec![1.3; c]).unwrap();
        for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
            check(&format!("batch_norm {shape:?} {mode:?}"), &[x.clone(), gamma.clone(), beta.clone()], || {
                probe(&tensor::batch_norm(&x, &gamma, &beta, &rm, &rv, mode, 0.1, 1e-5).unwrap())
            });
        }
    }
}

#[test]
fn spectral_normalization() {
    let mut r = rng::seeded(6, 0);
    let w = param(&[4, 2, 3, 3], -1.0, 1.0, &mut r);
    let mut state = SpectralNormState::new(4, 3, &mut r);
    // refine u once, then differentiate with u held fixed
    tensor::spectral_normalize(&w, &mut state, true).unwrap();
    check("spectral_normalize", &[w.clone()], || {
        let mut s = state.clone();
        probe(&tensor::spectral_normalize(&w, &mut s, false).unwrap().weight)
    });
}

#[test]
fn losses() {
    let mut r = rng::seeded(7, 0);
    let logits = param(&[6, 1], -3.0, 3.0, &mut r);
    let targets = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    check("bce_with_logits", &[logits.clone()], || tensor::bce_with_logits(&logits, &targets).unwrap());
    let logits = param(&[4, 3], -3.0, 3.0, &mut r);
    check("cross_entropy", &[logits.clone()], || tensor::cross_entropy(&logits, &[0, 2, 1, 2]).unwrap());
}

#[test]
fn quantum_layer() {
    let mut r = rng::seeded(8, 0);
    let layer = QuantumLayer::new(5, &mut r).unwrap();
    let z = param(&[3, 5], -1.5, 1.5, &mut r);
    check("quantum layer", &[z.clone(), layer.theta.clone()], || probe(&layer.forward(&z).unwrap()));
}

#[test]
fn reduced_generators() {
    for kind in [BlockKind::Classical, BlockKind::Quantum] {
        let mut r = rng::seeded(9, 0);
        let g = Generator::new(
            GeneratorConfig {
                block_kind: kind,
                base_channels: 8,
                output_size: 8,
                ..GeneratorConfig::default()
            },
            &mut r,
        )
        .unwrap();
        // larger weights than the 0.02 init so every path carries signal
        for p in nn::parameters(&g) {
            let n = p.numel();
            if n > 1 && p.shape().len() > 1 {
                let v: Vec<f64> = (0..n).map(|_| r.random_range(-0.6..0.6)).collect();
                p.data_mut().copy_from_slice(&v);
            }
        }
        let z = param(&[3, 5], -1.5, 1.5, &mut r);
        let mut params = nn::parameters(&g);
        params.push(z.clone());
        check(&format!("generator {kind}"), &params, || probe(&g.forward(&z, Mode::Train).unwrap()));
    }
}

#[test]
fn reduced_discriminators() {
    for kind in [HeadKind::Classical, HeadKind::Hybrid] {
        let mut r = rng::seeded(10, 0);
        let backbone = Backbone::new(BackboneConfig::reduced([3, 3, 4, 4, 4], 8), &mut r).unwrap();
        backbone.set_spectral_updates(false);
        let d = Discriminator::new(backbone, HeadConfig { kind, n_qubits: 5 }, &mut r).unwrap();
        for p in nn::parameters(&d) {
            let n = p.numel();
            if p.shape().len() > 1 {
                let v: Vec<f64> = (0..n).map(|_| r.random_range(-0.6..0.6)).collect();
                p.data_mut().copy_from_slice(&v);
            }
        }
        let x = param(&[3, 3, 8, 8], -1.0, 1.0, &mut r);
        let mut params = nn::parameters(&d);
        params.push(x.clone());
        check(&format!("discriminator {kind}"), &params, || probe(&d.forward(&x, Mode::Train).unwrap()));
    }
}
