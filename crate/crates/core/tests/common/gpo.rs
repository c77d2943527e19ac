//! Brute-force GP oracles: kernels written out from their closed forms,
//! dense inverses and LU determinants instead of Cholesky solves.

use bayes_scatter::gp::{log_marginal_likelihood, GPState, TargetStats};
use bayes_scatter::kernels::{KernelFamily, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{gp_problem, rng};

pub fn kernel_oracle(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    let ell = |d: usize| if spec.ard { spec.log_lengthscales[d].exp() } else { spec.log_lengthscales[0].exp() };
    let s2 = spec.log_signal_variance.exp();
    match spec.family {
        KernelFamily::Rbf => {
            let r2: f64 = (0..a.len()).map(|d| ((a[d] - b[d]) / ell(d)).powi(2)).sum();
            s2 * (-0.5 * r2).exp()
        }
        KernelFamily::Matern52 => {
            let r: f64 = (0..a.len()).map(|d| ((a[d] - b[d]) / ell(d)).powi(2)).sum::<f64>().sqrt();
            let s5 = 5f64.sqrt();
            s2 * (1.0 + s5 * r + 5.0 * r * r / 3.0) * (-s5 * r).exp()
        }
        KernelFamily::Linear => s2 * (0..a.len()).map(|d| a[d] * b[d] / ell(d).powi(2)).sum::<f64>(),
    }
}

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

pub fn oracle_matrix(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| kernel_oracle(spec, &row(a, i), &row(b, j)))
}

/// `(mean, variance incl. noise, lml)` on the given (already standardized)
/// targets.
pub fn brute_force(
    spec: &KernelSpec,
    noise: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    xs: &DMatrix<f64>,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.nrows();
    let k = oracle_matrix(spec, x, x) + DMatrix::identity(n, n) * noise;
    let kinv = k.clone().try_inverse().expect("invertible");
    let ks = oracle_matrix(spec, xs, x);
    let mean = &ks * (&kinv * y);
    let var: Vec<f64> = (0..xs.nrows())
        .map(|i| {
            let kr = ks.row(i).transpose();
            let xi = row(xs, i);
            kernel_oracle(spec, &xi, &xi) - (kr.transpose() * &kinv * &kr)[(0, 0)] + noise
        })
        .collect();
    let det = k.lu().determinant();
    let lml = -0.5 * (y.transpose() * &kinv * y)[(0, 0)] - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (mean.iter().copied().collect(), var, lml)
}

pub fn all_specs(d: usize, r: &mut impl Rng) -> Vec<KernelSpec> {
    let mut out = Vec::new();
    for fam in [KernelFamily::Rbf, KernelFamily::Matern52, KernelFamily::Linear] {
        out.push(KernelSpec::isotropic(fam, r.random_range(0.5..2.0), r.random_range(0.5..2.0)));
        let ls: Vec<f64> = (0..d).map(|_| r.random_range(0.5..2.0)).collect();
        out.push(KernelSpec::ard(fam, &ls, r.random_range(0.5..2.0)));
    }
    out
}

fn scaled_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Worst scaled disagreement (`|a - b| / max(1, |b|)`) between the library
/// and the dense oracle over `problems` random problems with `n <= 50`,
/// cycling through every kernel family with and without ARD.
pub fn oracle_disagreement(problems: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for p in 0..problems {
        let n = r.random_range(5..=50);
        let d = r.random_range(1..=4);
        let (x, y) = gp_problem(&mut r, n, d);
        let (xs, _) = gp_problem(&mut r, 10, d);
        let specs = all_specs(d, &mut r);
        let spec = specs[p % specs.len()].clone();
        let noise: f64 = r.random_range(0.01..0.5);
        let gp = GPState::condition(&x, y.clone(), spec.clone(), noise.ln(), TargetStats::identity()).unwrap();
        let pred = gp.predict(&xs).unwrap();
        let (mean, var, lml) = brute_force(&spec, noise, &x, &y, &xs);
        for i in 0..xs.nrows() {
            worst = worst.max(scaled_err(pred.standardized_mean[i], mean[i]));
            worst = worst.max(scaled_err(pred.standardized_variance[i], var[i]));
        }
        worst = worst.max(scaled_err(gp.log_marginal_likelihood(), lml));
        let (lml2, _) = log_marginal_likelihood(&x, &y, &spec, noise.ln()).unwrap();
        worst = worst.max(scaled_err(lml2, lml));
    }
    worst
}

/// Worst `||g - g_fd|| / ||g_fd||` of the LML gradient (kernel parameters
/// and log noise) against central differences, over every kernel family
/// with and without ARD.
pub fn gradient_fd_error(problems_per_kernel: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..problems_per_kernel {
        let n = r.random_range(5..=30);
        let d = r.random_range(1..=3);
        let (x, y) = gp_problem(&mut r, n, d);
        for spec in all_specs(d, &mut r) {
            let ln = r.random_range(0.01f64..0.5).ln();
            let (_, g) = log_marginal_likelihood(&x, &y, &spec, ln).unwrap();
            let mut theta = spec.params();
            theta.push(ln);
            let f = |t: &[f64]| {
                let mut s = spec.clone();
                s.set_params(&t[..t.len() - 1]);
                log_marginal_likelihood(&x, &y, &s, t[t.len() - 1]).unwrap().0
            };
            let fd: Vec<f64> = (0..theta.len())
                .map(|i| {
                    let (mut tp, mut tm) = (theta.clone(), theta.clone());
                    tp[i] += h;
                    tm[i] -= h;
                    (f(&tp) - f(&tm)) / (2.0 * h)
                })
                .collect();
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        }
    }
    worst
}
