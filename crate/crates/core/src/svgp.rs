//! Sparse variational GP regression (SVGP) with a whitened inducing
//! parameterization and mini-batch ELBO training.
//!
//! With `K_zz = L_z L_z^T` the inducing values are `u = L_z v` and the
//! variational posterior is `q(v) = N(m, L_s L_s^T)`, so the prior on `v` is
//! standard normal and the KL term does not depend on the kernel.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{mean_pairwise_distance, robust_cholesky, PredictiveDistribution, TargetStats, NOISE_FLOOR};
use crate::kernels::{KernelChoice, KernelSpec};
use crate::optim::Adam;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvgpConfig {
    pub num_inducing: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// The step size is held at `lr` for the first half of the run, then
    /// decays geometrically to `lr * lr_final_fraction`; 1 keeps it constant.
    pub lr_final_fraction: f64,
    pub seed: u64,
    pub train_inducing: bool,
    pub train_hypers: bool,
    /// Hold the standardized noise variance fixed at this value.
    pub fixed_noise: Option<f64>,
}

impl Default for SvgpConfig {
    fn default() -> Self {
        SvgpConfig {
            num_inducing: 1024,
            batch_size: 256,
            steps: 5000,
            lr: 0.01,
            lr_final_fraction: 1.0,
            seed: 0,
            train_inducing: true,
            train_hypers: true,
            fixed_noise: None,
        }
    }
}

/// Gradients of the ELBO (ascent direction) in the natural parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SvgpGradient {
    pub mean: DVector<f64>,
    /// With respect to the entries of `L_s`; lower triangle only.
    pub chol: DMatrix<f64>,
    pub inducing: DMatrix<f64>,
    pub kernel: Vec<f64>,
    pub log_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SVGPState {
    /// Inducing inputs, `M x D`.
    pub z: DMatrix<f64>,
    /// Whitened variational mean.
    pub q_mean: DVector<f64>,
    /// Lower-triangular factor of the whitened variational covariance.
    pub q_chol: DMatrix<f64>,
    pub spec: KernelSpec,
    pub log_noise_variance: f64,
    pub target_stats: TargetStats,
    pub steps_taken: usize,
}

/// k-means++ style seeding: first row uniform, then rows drawn with
/// probability proportional to squared distance from the nearest pick.
pub fn kmeanspp_indices(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    if m > n || m == 0 {
        return Err(Error::InvalidConfig(format!("{m} inducing points requested from {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(m);
    let first = rng.random_range(0..n);
    picks.push(first);
    chosen[first] = true;
    let sqdist = |i: usize, j: usize| (x.row(i) - x.row(j)).norm_squared();
    let mut nearest: Vec<f64> = (0..n).map(|i| sqdist(i, first)).collect();
    while picks.len() < m {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| nearest[i]).sum();
        let next = if total > 0.0 && total.is_finite() {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                target -= nearest[i];
                if target < 0.0 && nearest[i] > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at ~0 after the last candidate
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && nearest[i] > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        picks.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sqdist(i, next));
        }
    }
    Ok(picks)
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

fn lower_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("factor has nonzero diagonal")
}

fn lower_tr_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("factor has nonzero diagonal")
}

fn tril(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        for i in 0..j.min(m.nrows()) {
            m[(i, j)] = 0.0;
        }
    }
    m
}

/// Reverse-mode step through `K = L L^T`: maps the gradient with respect to
/// the factor (lower triangle of `l_bar`) to a symmetric gradient on `K`.
pub fn cholesky_backward(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = tril(l.transpose() * tril(l_bar.clone()));
    for i in 0..p.nrows() {
        p[(i, i)] *= 0.5;
    }
    let psym = (&p + p.transpose()) * 0.5;
    let x = lower_tr_solve(l, &psym);
    lower_tr_solve(l, &x.transpose()).transpose()
}

impl SVGPState {
    /// Prior-initialized state: `q(v) = N(0, I)`, i.e. `q(u) = p(u)`.
    pub fn new(z: DMatrix<f64>, spec: KernelSpec, log_noise_variance: f64, target_stats: TargetStats) -> Result<Self> {
        spec.validate()?;
        let m = z.nrows();
        if m == 0 {
            return Err(Error::InvalidConfig("no inducing points".into()));
        }
        Ok(SVGPState {
            z,
            q_mean: DVector::zeros(m),
            q_chol: DMatrix::identity(m, m),
            spec,
            log_noise_variance,
            target_stats,
            steps_taken: 0,
        })
    }

    /// Standardize targets, seed inducing points, initialize hyperparameters
    /// as the exact GP does, and train.
    pub fn fit(x: &DMatrix<f64>, y_raw: &[f64], choice: KernelChoice, cfg: &SvgpConfig) -> Result<Self> {
        let (mut state, y) = Self::initialize(x, y_raw, choice, cfg)?;
        state.train(x, &y, cfg)?;
        Ok(state)
    }

    /// The untrained state `fit` starts from, with the standardized targets.
    pub fn initialize(
        x: &DMatrix<f64>,
        y_raw: &[f64],
        choice: KernelChoice,
        cfg: &SvgpConfig,
    ) -> Result<(Self, DVector<f64>)> {
        if x.nrows() != y_raw.len() {
            return Err(Error::LengthMismatch { left: x.nrows(), right: y_raw.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("training features".into()));
        }
        let stats = TargetStats::fit(y_raw)?;
        let y = stats.standardize_all(y_raw);
        let picks = kmeanspp_indices(x, cfg.num_inducing, cfg.seed)?;
        let z = rows(x, &picks);
        let ell = mean_pairwise_distance(x, cfg.seed);
        let spec = choice.init(x.ncols(), ell, 1.0);
        let noise = cfg.fixed_noise.unwrap_or(0.01);
        Ok((Self::new(z, spec, noise.ln(), stats)?, y))
    }

    pub fn num_inducing(&self) -> usize {
        self.z.nrows()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    fn check_dims(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.z.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "inducing inputs have {} features, got {}",
                self.z.ncols(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn whitened_projection(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let kzz = self.spec.gram(&self.z)?;
        let (lz, _) = robust_cholesky(&kzz)?;
        let kzx = self.spec.matrix(&self.z, x)?;
        let a = lower_solve(&lz, &kzx);
        Ok((lz, a))
    }

    /// `KL[q(v) || N(0, I)]`.
    pub fn kl(&self) -> f64 {
        let m = self.num_inducing() as f64;
        0.5 * (self.q_chol.norm_squared() + self.q_mean.norm_squared() - m)
            - self.q_chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Mini-batch ELBO estimate: the batch expected log-likelihood scaled by
    /// `n_total / batch_size`, minus the KL term.
    pub fn elbo(&self, xb: &DMatrix<f64>, yb: &DVector<f64>, n_total: usize) -> Result<f64> {
        Ok(self.elbo_impl(xb, yb, n_total, false)?.0)
    }

    pub fn elbo_and_gradient(&self, xb: &DMatrix<f64>, yb: &DVector<f64>, n_total: usize) -> Result<(f64, SvgpGradient)> {
        let (v, g) = self.elbo_impl(xb, yb, n_total, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn elbo_impl(
        &self,
        xb: &DMatrix<f64>,
        yb: &DVector<f64>,
        n_total: usize,
        want_grad: bool,
    ) -> Result<(f64, Option<SvgpGradient>)> {
        self.check_dims(xb)?;
        let b = xb.nrows();
        if b == 0 {
            return Err(Error::InvalidConfig("empty mini-batch".into()));
        }
        if yb.len() != b {
            return Err(Error::LengthMismatch { left: b, right: yb.len() });
        }
        let (lz, a) = self.whitened_projection(xb)?;
        let kxx = self.spec.diag(xb)?;
        let mu = a.tr_mul(&self.q_mean);
        let lta = self.q_chol.transpose() * &a;
        let s2 = self.noise_variance();
        let scale = n_total as f64 / b as f64;
        let mut ell = 0.0;
        let mut sq_plus_var = DVector::zeros(b);
        for i in 0..b {
            let var = kxx[i] - a.column(i).norm_squared() + lta.column(i).norm_squared();
            let r = yb[i] - mu[i];
            sq_plus_var[i] = r * r + var;
            ell += -0.5 * (LN_2PI + self.log_noise_variance) - sq_plus_var[i] / (2.0 * s2);
        }
        let value = scale * ell - self.kl();
        if !want_grad {
            return Ok((value, None));
        }

        let g_mu = (yb - &mu) * (scale / s2);
        let g_var = -scale / (2.0 * s2);
        let g_mean = &a * &g_mu - &self.q_mean;
        let mut g_chol = (&a * a.transpose()) * &self.q_chol * (2.0 * g_var) - &self.q_chol;
        for i in 0..self.num_inducing() {
            g_chol[(i, i)] += 1.0 / self.q_chol[(i, i)];
        }
        let g_chol = tril(g_chol);
        let log_noise = scale * sq_plus_var.iter().map(|v| -0.5 + v / (2.0 * s2)).sum::<f64>();

        // dELBO/dA, then through A = L_z^{-1} K_zx
        let g_a = &self.q_mean * g_mu.transpose() + (&self.q_chol * &lta - &a) * (2.0 * g_var);
        let g_kzx = lower_tr_solve(&lz, &g_a);
        let g_lz = -(&g_kzx * a.transpose());
        let g_kzz = cholesky_backward(&lz, &g_lz);
        let g_kxx = DVector::from_element(b, g_var);

        let mut kernel = self.spec.grad_contract(&self.z, &self.z, &g_kzz)?;
        let cross = self.spec.grad_contract(&self.z, xb, &g_kzx)?;
        let (diag, _) = self.spec.diag_grad_contract(xb, &g_kxx)?;
        for (k, (c, d)) in kernel.iter_mut().zip(cross.iter().zip(&diag)) {
            *k += c + d;
        }
        let (za, zb) = self.spec.input_grad_contract(&self.z, &self.z, &g_kzz)?;
        let (zc, _) = self.spec.input_grad_contract(&self.z, xb, &g_kzx)?;
        let inducing = za + zb + zc;

        Ok((
            value,
            Some(SvgpGradient {
                mean: g_mean,
                chol: g_chol,
                inducing,
                kernel,
                log_noise,
            }),
        ))
    }

    /// Flattened unconstrained parameters: whitened mean, lower triangle of
    /// `L_s` (column-major, log on the diagonal), inducing inputs
    /// (row-major), kernel log-hyperparameters, log noise variance.
    pub fn params(&self) -> Vec<f64> {
        let m = self.num_inducing();
        let mut p = Vec::with_capacity(self.num_params());
        p.extend(self.q_mean.iter());
        for j in 0..m {
            p.push(self.q_chol[(j, j)].ln());
            for i in (j + 1)..m {
                p.push(self.q_chol[(i, j)]);
            }
        }
        for r in 0..m {
            p.extend(self.z.row(r).iter());
        }
        p.extend(self.spec.params());
        p.push(self.log_noise_variance);
        p
    }

    pub fn num_params(&self) -> usize {
        let (m, d) = (self.num_inducing(), self.z.ncols());
        m + m * (m + 1) / 2 + m * d + self.spec.num_params() + 1
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "SVGP parameter count");
        let (m, d) = (self.num_inducing(), self.z.ncols());
        let mut it = p.iter().copied();
        for i in 0..m {
            self.q_mean[i] = it.next().unwrap();
        }
        for j in 0..m {
            self.q_chol[(j, j)] = it.next().unwrap().exp();
            for i in (j + 1)..m {
                self.q_chol[(i, j)] = it.next().unwrap();
            }
        }
        for r in 0..m {
            for c in 0..d {
                self.z[(r, c)] = it.next().unwrap();
            }
        }
        let kp: Vec<f64> = it.by_ref().take(self.spec.num_params()).collect();
        self.spec.set_params(&kp);
        self.log_noise_variance = it.next().unwrap();
    }

    /// Gradient in the layout of [`SVGPState::params`].
    pub fn flatten_gradient(&self, g: &SvgpGradient) -> Vec<f64> {
        let m = self.num_inducing();
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(g.mean.iter());
        for j in 0..m {
            out.push(g.chol[(j, j)] * self.q_chol[(j, j)]);
            for i in (j + 1)..m {
                out.push(g.chol[(i, j)]);
            }
        }
        for r in 0..m {
            out.extend(g.inducing.row(r).iter());
        }
        out.extend(g.kernel.iter());
        out.push(g.log_noise);
        out
    }

    /// Adam ascent on the mini-batch ELBO.
    pub fn train(&mut self, x: &DMatrix<f64>, y: &DVector<f64>, cfg: &SvgpConfig) -> Result<()> {
        let n = x.nrows();
        if n != y.len() {
            return Err(Error::LengthMismatch { left: n, right: y.len() });
        }
        if cfg.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(cfg.lr_final_fraction > 0.0 && cfg.lr_final_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_final_fraction {} not in (0, 1]",
                cfg.lr_final_fraction
            )));
        }
        self.check_dims(x)?;
        if cfg.steps == 0 {
            return Ok(());
        }
        let m = self.num_inducing();
        let d = self.z.ncols();
        let n_var = m + m * (m + 1) / 2;
        let z_end = n_var + m * d;
        let total = self.num_params();
        let log_floor = NOISE_FLOOR.ln();
        if let Some(v) = cfg.fixed_noise {
            self.log_noise_variance = v.ln();
        }
        let mut params = self.params();
        let mut adam = Adam::new(total, cfg.lr);
        // separate stream so batch order does not depend on inducing seeding
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5356_4750_6261_7463);
        let full = cfg.batch_size >= n;
        let (xf, yf) = (x.clone(), y.clone());
        let hold = cfg.steps / 2;
        let decay = cfg.lr_final_fraction.powf(1.0 / (cfg.steps - hold) as f64);
        for step_no in 0..cfg.steps {
            adam.lr = cfg.lr * decay.powi(step_no.saturating_sub(hold) as i32);
            let (xb, yb) = if full {
                (xf.clone(), yf.clone())
            } else {
                let idx = index::sample(&mut rng, n, cfg.batch_size).into_vec();
                (rows(x, &idx), DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i])))
            };
            let (_, g) = self.elbo_and_gradient(&xb, &yb, n)?;
            let mut step: Vec<f64> = self.flatten_gradient(&g).iter().map(|v| -v).collect();
            if !cfg.train_inducing {
                step[n_var..z_end].iter_mut().for_each(|v| *v = 0.0);
            }
            if !cfg.train_hypers {
                step[z_end..total - 1].iter_mut().for_each(|v| *v = 0.0);
            }
            if !cfg.train_hypers || cfg.fixed_noise.is_some() {
                step[total - 1] = 0.0;
            }
            if step.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("ELBO gradient".into()));
            }
            let frozen_noise = params[total - 1];
            adam.step(&mut params, &step);
            if step[total - 1] == 0.0 {
                params[total - 1] = frozen_noise;
            } else {
                params[total - 1] = params[total - 1].max(log_floor);
            }
            self.set_params(&params);
            self.steps_taken += 1;
        }
        Ok(())
    }

    /// Replace `q` by the optimum for the current inducing inputs and
    /// hyperparameters on the full data set.
    pub fn set_optimal_variational(&mut self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
        self.check_dims(x)?;
        let (_, a) = self.whitened_projection(x)?;
        let s2 = self.noise_variance();
        let m = self.num_inducing();
        let precision = DMatrix::identity(m, m) + (&a * a.transpose()) / s2;
        let (lp, _) = robust_cholesky(&precision)?;
        // S = P^{-1} = L_p^{-T} L_p^{-1}; a lower factor of S is needed, so
        // factor S directly.
        let lpinv = crate::gp::lower_triangular_inverse(&lp);
        let mut s = lpinv.transpose() * &lpinv;
        crate::kernels::symmetrize(&mut s);
        let (ls, _) = robust_cholesky(&s)?;
        let rhs = (&a * y) / s2;
        let mean = lp.tr_solve_lower_triangular(&lp.solve_lower_triangular(&rhs).unwrap()).unwrap();
        self.q_mean = mean;
        self.q_chol = ls;
        Ok(())
    }

    pub fn predict(&self, x_test: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        self.check_dims(x_test)?;
        let (_, a) = self.whitened_projection(x_test)?;
        let kxx = self.spec.diag(x_test)?;
        let mean = a.tr_mul(&self.q_mean);
        let lta = self.q_chol.transpose() * &a;
        let s2 = self.noise_variance();
        let var: Vec<f64> = (0..x_test.nrows())
            .map(|i| (kxx[i] - a.column(i).norm_squared() + lta.column(i).norm_squared()).max(0.0) + s2)
            .collect();
        Ok(PredictiveDistribution::from_standardized(
            mean.iter().copied().collect(),
            var,
            self.target_stats,
        ))
    }
}
