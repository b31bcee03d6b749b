//! Shared test oracles. Everything here is independent of the autodiff
//! implementation it checks: gradients come from central finite differences
//! over re-executed forward passes.
//!
//! Compiled into several test binaries; not every binary uses every helper.
#![allow(dead_code)]

use tabseq::rng::Rng;
use tabseq::tensor::{no_grad, Tensor};

/// Central finite-difference gradient check at f64.
///
/// `build_loss` must reconstruct the scalar loss from the parameters'
/// *current* data, so perturbing a parameter and re-running yields the
/// perturbed loss. Returns the worst relative error over all coordinates.
pub fn finite_diff_check(params: &[Tensor<f64>], build_loss: impl Fn() -> Tensor<f64>) -> f64 {
    let h = 1e-5;
    for p in params {
        p.zero_grad();
    }
    let loss = build_loss();
    loss.backward().expect("backward failed");

    let mut worst: f64 = 0.0;
    for p in params {
        let analytic = p
            .grad()
            .unwrap_or_else(|| panic!("no gradient for parameter with shape {:?}", p.shape()));
        let base = p.to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            p.set_data(plus);
            let lp = no_grad(&build_loss).item();

            let mut minus = base.clone();
            minus[i] -= h;
            p.set_data(minus);
            let lm = no_grad(&build_loss).item();

            p.set_data(base.clone());
            let numeric = (lp - lm) / (2.0 * h);
            let err = rel_err(analytic[i], numeric);
            if err > worst {
                worst = err;
            }
        }
    }
    worst
}

/// |a-n| relative to max(|a|, |n|), with an absolute floor so near-zero
/// gradients compare on an absolute scale.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-6 {
        (a - n).abs() * 1e2 // treat as absolute error against 1e-2 scale
    } else {
        (a - n).abs() / scale
    }
}

pub fn assert_gradcheck(params: &[Tensor<f64>], build_loss: impl Fn() -> Tensor<f64>, tol: f64) {
    let worst = finite_diff_check(params, build_loss);
    assert!(worst < tol, "gradient check failed: worst rel err {worst:.3e} >= {tol:.1e}");
}

pub fn randn_param(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<f64> {
    Tensor::param(shape, std, rng)
}

/// Count total scalar parameters.
pub fn param_count(params: &[Tensor<f64>]) -> usize {
    params.iter().map(|p| p.numel()).sum()
}
