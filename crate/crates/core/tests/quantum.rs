//! Statevector simulator against the dense-unitary oracle, and the
//! parameter-shift rule against finite differences.

use std::f64::consts::PI;

use hqgan::quantum::{
    dense_unitary_oracle, expectations, parameter_shift_gradients, simulate, CircuitParams,
};
use hqgan::rng::{self, Rng};
use hqgan::Tensor;
use proptest::prelude::*;
use rand::Rng as _;

fn random_instance(r: &mut Rng, n: usize) -> (Vec<f64>, CircuitParams) {
    let z = (0..n).map(|_| r.random_range(-PI..PI)).collect();
    let theta = (0..3 * n).map(|_| r.random_range(-PI..PI)).collect();
    (z, CircuitParams::new(n, theta).unwrap())
}

#[test]
fn simulator_matches_dense_oracle() {
    let mut r = rng::seeded(100, 0);
    for case in 0..200 {
        let (z, theta) = random_instance(&mut r, 5);
        let fast = expectations(&z, &theta).unwrap().0;
        let dense = dense_unitary_oracle(5, &z, &theta).unwrap().0;
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}");
        }
        let norm = simulate(&z, theta.as_slice()).unwrap().norm_sqr();
        assert!((norm - 1.0).abs() < 1e-10);
    }
}

#[test]
fn oracle_agrees_for_other_register_sizes() {
    let mut r = rng::seeded(101, 0);
    for n in 1..=4 {
        for _ in 0..10 {
            let (z, theta) = random_instance(&mut r, n);
            let fast = expectations(&z, &theta).unwrap().0;
            let dense = dense_unitary_oracle(n, &z, &theta).unwrap().0;
            for (a, b) in fast.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

/// Full Jacobians `∂⟨Z_j⟩/∂z_i` and `∂⟨Z_j⟩/∂θ_k` by both routes.
fn jacobian_gap(z: &[f64], theta: &CircuitParams, h: f64) -> f64 {
    let n = z.len();
    let zt = Tensor::new(&[1, n], z.to_vec()).unwrap();
    let mut worst = 0.0f64;
    for j in 0..n {
        let mut up = vec![0.0; n];
        up[j] = 1.0;
        let g = parameter_shift_gradients(&zt, theta, &Tensor::new(&[1, n], up).unwrap()).unwrap();
        let f = |z: &[f64], t: &[f64]| simulate(z, t).unwrap().expectations_z()[j];
        for i in 0..n {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[i] += h;
            zm[i] -= h;
            let fd = (f(&zp, theta.as_slice()) - f(&zm, theta.as_slice())) / (2.0 * h);
            worst = worst.max((fd - g.grad_z[i]).abs());
        }
        for k in 0..3 * n {
            let (mut tp, mut tm) = (theta.as_slice().to_vec(), theta.as_slice().to_vec());
            tp[k] += h;
            tm[k] -= h;
            let fd = (f(z, &tp) - f(z, &tm)) / (2.0 * h);
            worst = worst.max((fd - g.grad_theta[k]).abs());
        }
    }
    worst
}

#[test]
fn parameter_shift_matches_finite_differences() {
    let mut r = rng::seeded(102, 0);
    for case in 0..100 {
        let (z, theta) = random_instance(&mut r, 5);
        let gap = jacobian_gap(&z, &theta, 1e-4);
        assert!(gap < 1e-8, "case {case}: gap {gap:e}");
    }
}

#[test]
fn final_rz_angles_have_zero_gradient() {
    // RZ commutes with the measured Z, so these angles cannot move ⟨Z⟩
    let mut r = rng::seeded(103, 0);
    let (z, theta) = random_instance(&mut r, 5);
    let zt = Tensor::new(&[1, 5], z).unwrap();
    let g = parameter_shift_gradients(&zt, &theta, &Tensor::full(&[1, 5], 1.0)).unwrap();
    for q in 0..5 {
        assert!(g.grad_theta[3 * q + 2].abs() < 1e-14);
    }
}

#[test]
fn batched_gradients_sum_over_rows() {
    let mut r = rng::seeded(104, 0);
    let (z1, theta) = random_instance(&mut r, 5);
    let (z2, _) = random_instance(&mut r, 5);
    let up = Tensor::new(&[1, 5], vec![0.3, -1.0, 0.5, 2.0, 0.1]).unwrap();
    let single = |z: &[f64]| {
        parameter_shift_gradients(&Tensor::new(&[1, 5], z.to_vec()).unwrap(), &theta, &up).unwrap()
    };
    let both = parameter_shift_gradients(
        &Tensor::new(&[2, 5], [z1.clone(), z2.clone()].concat()).unwrap(),
        &theta,
        &Tensor::new(&[2, 5], [up.to_vec(), up.to_vec()].concat()).unwrap(),
    )
    .unwrap();
    let (a, b) = (single(&z1), single(&z2));
    for k in 0..15 {
        assert!((both.grad_theta[k] - a.grad_theta[k] - b.grad_theta[k]).abs() < 1e-13);
    }
    assert_eq!(&both.grad_z[..5], &a.grad_z[..]);
    assert_eq!(&both.grad_z[5..], &b.grad_z[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expectations_bounded_and_norm_preserved(
        z in prop::collection::vec(-1e3f64..1e3, 5),
        theta in prop::collection::vec(-10.0f64..10.0, 15),
    ) {
        let psi = simulate(&z, &theta).unwrap();
        prop_assert!((psi.norm_sqr() - 1.0).abs() < 1e-10);
        for e in psi.expectations_z() {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&e));
        }
    }

    #[test]
    fn encoding_is_2pi_periodic_up_to_sign(
        z in prop::collection::vec(-PI..PI, 5),
        theta in prop::collection::vec(-PI..PI, 15),
        q in 0usize..5,
    ) {
        // RY(φ + 2π) = −RY(φ): a global phase, invisible to expectations
        let params = CircuitParams::new(5, theta).unwrap();
        let base = expectations(&z, &params).unwrap().0;
        let mut shifted = z.clone();
        shifted[q] += 2.0 * PI;
        let other = expectations(&shifted, &params).unwrap().0;
        for (a, b) in base.iter().zip(&other) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
