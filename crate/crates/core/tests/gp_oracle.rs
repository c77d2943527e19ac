mod common;

use bayes_scatter::gp::{GPState, OptimizerConfig};
use bayes_scatter::kernels::{KernelChoice, KernelFamily};
use common::gpo::*;
use common::{gp_problem, rng};

#[test]
fn posterior_and_evidence_match_dense_inverse() {
    let worst = oracle_disagreement(20, 11);
    assert!(worst <= 1e-8, "worst disagreement {worst:e}");
}

#[test]
fn evidence_gradient_matches_central_differences() {
    let worst = gradient_fd_error(3, 12);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn fitting_never_worsens_the_evidence() {
    let mut r = rng(13);
    for fam in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::Linear] {
        for ard in [false, true] {
            let (x, y) = gp_problem(&mut r, 25, 3);
            let yr: Vec<f64> = y.iter().copied().collect();
            let gp = GPState::fit(&x, &yr, KernelChoice::new(fam, ard), &OptimizerConfig { iters: 60, ..Default::default() }).unwrap();
            let info = gp.fit_info.clone().unwrap();
            assert!(info.final_neg_lml <= info.initial_neg_lml, "{fam:?} ard={ard}");
            assert!(gp.noise_variance() >= bayes_scatter::gp::NOISE_FLOOR);
        }
    }
}

#[test]
fn raw_predictions_are_affine_in_the_targets() {
    let mut r = rng(14);
    let (x, y) = gp_problem(&mut r, 20, 2);
    let (xs, _) = gp_problem(&mut r, 5, 2);
    let yr: Vec<f64> = y.iter().copied().collect();
    let ys: Vec<f64> = yr.iter().map(|v| 7.0 * v - 3.0).collect();
    let opt = OptimizerConfig { iters: 40, ..Default::default() };
    let choice = KernelChoice::new(KernelFamily::Rbf, false);
    let a = GPState::fit(&x, &yr, choice, &opt).unwrap().predict(&xs).unwrap();
    let b = GPState::fit(&x, &ys, choice, &opt).unwrap().predict(&xs).unwrap();
    for i in 0..5 {
        assert!((b.mean[i] - (7.0 * a.mean[i] - 3.0)).abs() < 1e-8);
        assert!((b.variance[i] - 49.0 * a.variance[i]).abs() < 1e-8 * b.variance[i].max(1.0));
        assert!((a.standardized_mean[i] - b.standardized_mean[i]).abs() < 1e-10);
    }
}
