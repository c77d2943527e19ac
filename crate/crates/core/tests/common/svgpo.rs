//! SVGP bound, convergence and mini-batch checks.

use bayes_scatter::gp::{log_marginal_likelihood, GPState, OptimizerConfig, TargetStats};
use bayes_scatter::kernels::{KernelChoice, KernelFamily};
use bayes_scatter::svgp::{SVGPState, SvgpConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::gpo::all_specs;
use super::{gp_problem, rng};

/// Largest `ELBO - LML` over random data, hyperparameters, inducing inputs
/// and variational distributions (the bound holds when it is <= 0).
pub fn worst_bound_excess(settings: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = f64::NEG_INFINITY;
    for s in 0..settings {
        let n = r.random_range(5..=30);
        let d = r.random_range(1..=3);
        let (x, y) = gp_problem(&mut r, n, d);
        let specs = all_specs(d, &mut r);
        let mut spec = specs[s % specs.len()].clone();
        if spec.family == KernelFamily::Linear {
            // a rank-d prior over more than d inducing points is singular
            spec = specs[s % 4].clone();
        }
        let m = r.random_range(2..=10);
        let z = if s % 5 == 0 {
            x.clone()
        } else {
            DMatrix::from_fn(m, d, |_, _| r.random_range(-2.0..2.0))
        };
        let ln = r.random_range(0.01f64..1.0).ln();
        let mut state = SVGPState::new(z, spec.clone(), ln, TargetStats::identity()).unwrap();
        let mm = state.num_inducing();
        state.q_mean = DVector::from_fn(mm, |_, _| r.random_range(-1.5..1.5));
        state.q_chol = DMatrix::from_fn(mm, mm, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => r.random_range(0.05..1.2),
            std::cmp::Ordering::Greater => r.random_range(-0.5..0.5),
        });
        if s % 7 == 0 {
            state.set_optimal_variational(&x, &y).unwrap();
        }
        let elbo = state.elbo(&x, &y, n).unwrap();
        let (lml, _) = log_marginal_likelihood(&x, &y, &spec, ln).unwrap();
        worst = worst.max(elbo - lml);
    }
    worst
}

pub struct Convergence {
    pub gap: f64,
    pub mean_diff: f64,
    pub std_diff: f64,
}

/// Exact GP fit, then an SVGP with `Z = X` and the same hyperparameters
/// trained by full-batch Adam; compares the bound to the evidence and the
/// standardized predictions on held-out inputs.
pub fn z_equals_x_convergence(seed: u64) -> Convergence {
    let mut r = rng(seed);
    let (x, y) = gp_problem(&mut r, 60, 2);
    let (xs, _) = gp_problem(&mut r, 40, 2);
    let y_raw: Vec<f64> = y.iter().map(|v| 3.0 * v + 10.0).collect();
    let choice = KernelChoice::new(KernelFamily::Rbf, false);
    let exact = GPState::fit(&x, &y_raw, choice, &OptimizerConfig { iters: 300, ..Default::default() }).unwrap();
    let mut sv = SVGPState::new(x.clone(), exact.spec.clone(), exact.log_noise_variance, exact.target_stats).unwrap();
    let cfg = SvgpConfig {
        num_inducing: x.nrows(),
        batch_size: x.nrows(),
        steps: 8000,
        lr: 0.05,
        lr_final_fraction: 1e-3,
        seed,
        train_inducing: false,
        train_hypers: false,
        fixed_noise: None,
    };
    sv.train(&x, &exact.y_train, &cfg).unwrap();
    let elbo = sv.elbo(&x, &exact.y_train, x.nrows()).unwrap();
    let lml = exact.log_marginal_likelihood();
    let (pe, ps) = (exact.predict(&xs).unwrap(), sv.predict(&xs).unwrap());
    let max_abs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    Convergence {
        gap: (lml - elbo).abs(),
        mean_diff: max_abs(&pe.standardized_mean, &ps.standardized_mean),
        std_diff: max_abs(&pe.standardized_std(), &ps.standardized_std()),
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if n < k {
        return Vec::new();
    }
    let mut with_last = subsets(n - 1, k - 1);
    for s in &mut with_last {
        s.push(n - 1);
    }
    let mut out = subsets(n - 1, k);
    out.extend(with_last);
    out
}

/// `|mean over every size-B batch of ELBO_B - ELBO_full|`: the rescaled
/// mini-batch objective is unbiased under uniform sampling without
/// replacement, so this is rounding error only.
pub fn minibatch_bias(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, b) = (10, 4);
    let (x, y) = gp_problem(&mut r, n, 2);
    let z = DMatrix::from_fn(5, 2, |_, _| r.random_range(-2.0..2.0));
    let spec = KernelChoice::new(KernelFamily::Matern52, true).init(2, 1.3, 0.9);
    let mut s = SVGPState::new(z, spec, 0.1f64.ln(), TargetStats::identity()).unwrap();
    s.q_mean = DVector::from_fn(5, |_, _| r.random_range(-1.0..1.0));
    let full = s.elbo(&x, &y, n).unwrap();
    let all = subsets(n, b);
    let mean = all
        .iter()
        .map(|idx| {
            let xb = DMatrix::from_fn(b, 2, |i, j| x[(idx[i], j)]);
            let yb = DVector::from_fn(b, |i, _| y[idx[i]]);
            s.elbo(&xb, &yb, n).unwrap()
        })
        .sum::<f64>()
        / all.len() as f64;
    (mean - full).abs()
}
