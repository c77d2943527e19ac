//! Exact Gaussian-process regression.
//!
//! Targets are standardized with the training mean and standard deviation
//! before anything else happens; all hyperparameters (including the noise
//! variance) live on that standardized scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{iso_base, KernelChoice, KernelSpec};
use crate::optim::Adam;

/// Lower bound on the standardized noise variance while optimizing.
pub const NOISE_FLOOR: f64 = 1e-6;
/// Jitter schedule, relative to `mean(diag K)`.
pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-2;
/// Floor on the training-target standard deviation.
pub const TARGET_STD_FLOOR: f64 = 1e-12;
/// Pairwise-distance initialization uses every pair up to this many rows.
pub const ALL_PAIRS_LIMIT: usize = 2000;
pub const SUBSAMPLED_PAIRS: usize = 1_000_000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    /// Mean and population standard deviation, the latter floored.
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyTrain);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("targets".into()));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(TargetStats {
            mean,
            std: var.sqrt().max(TARGET_STD_FLOOR),
        })
    }

    pub fn identity() -> Self {
        TargetStats { mean: 0.0, std: 1.0 }
    }

    pub fn standardize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn standardize_all(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(y.len(), y.iter().map(|&v| self.standardize(v)))
    }
}

/// Gaussian predictive marginals for a batch of inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    /// Includes the observation noise.
    pub variance: Vec<f64>,
    pub standardized_mean: Vec<f64>,
    pub standardized_variance: Vec<f64>,
    pub target_stats: TargetStats,
}

impl PredictiveDistribution {
    pub fn from_standardized(mean: Vec<f64>, variance: Vec<f64>, stats: TargetStats) -> Self {
        let s2 = stats.std * stats.std;
        PredictiveDistribution {
            mean: mean.iter().map(|&m| stats.destandardize(m)).collect(),
            variance: variance.iter().map(|v| v * s2).collect(),
            standardized_mean: mean,
            standardized_variance: variance,
            target_stats: stats,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn standardized_std(&self) -> Vec<f64> {
        self.standardized_variance.iter().map(|v| v.sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    /// Hold the standardized noise variance at this value instead of
    /// learning it. May be below [`NOISE_FLOOR`].
    pub fixed_noise: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iters: 500,
            lr: 0.05,
            seed: 0,
            fixed_noise: None,
        }
    }
}

/// Summary of a hyperparameter optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub initial_neg_lml: f64,
    pub final_neg_lml: f64,
    pub iterations: usize,
}

/// Lower Cholesky factor of a symmetric matrix, adding diagonal jitter when
/// the plain factorization fails. Returns the factor and the jitter used.
pub fn robust_cholesky(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    if let Some(l) = try_cholesky(k) {
        return Ok((l, 0.0));
    }
    if k.iter().any(|v| !v.is_finite()) {
        // no jitter can repair an overflowed or NaN matrix
        return Err(Error::CholeskyFailure { jitter: 0.0 });
    }
    let scale = if n == 0 { 1.0 } else { k.diagonal().mean().abs().max(f64::MIN_POSITIVE) };
    let mut jitter = JITTER_START * scale;
    let mut last = 0.0;
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-12) {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(l) = try_cholesky(&kj) {
            log::debug!("cholesky needed jitter {jitter:.3e}");
            return Ok((l, jitter));
        }
        last = jitter;
        jitter *= 2.0;
    }
    Err(Error::CholeskyFailure { jitter: last })
}

/// Pivots below this fraction of the largest diagonal entry are treated as
/// a failed factorization: the matrix is numerically singular.
const PIVOT_TOLERANCE: f64 = 1e-14;

fn try_cholesky(k: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if k.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let max_diag = k.diagonal().iter().fold(0.0f64, |a, &b| a.max(b));
    let chol = k.clone().cholesky()?;
    let l = chol.unpack();
    let ok = l
        .diagonal()
        .iter()
        .all(|&d| d.is_finite() && d * d > PIVOT_TOLERANCE * max_diag);
    ok.then_some(l)
}

fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("factor has nonzero diagonal")
}

/// Inverse of a lower-triangular matrix by recursive 2x2 blocking, so the
/// bulk of the work is matrix products:
/// `[A 0; B C]^-1 = [A^-1 0; -C^-1 B A^-1  C^-1]`.
pub(crate) fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    const BASE: usize = 64;
    let n = l.nrows();
    if n <= BASE {
        return solve_lower(l, &DMatrix::identity(n, n));
    }
    let h = n / 2;
    let ai = lower_triangular_inverse(&l.view((0, 0), (h, h)).into_owned());
    let ci = lower_triangular_inverse(&l.view((h, h), (n - h, n - h)).into_owned());
    let off = -(&ci * (l.view((h, 0), (n - h, h)) * &ai));
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&ai);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&ci);
    out.view_mut((h, 0), (n - h, h)).copy_from(&off);
    out
}

fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("factor has nonzero diagonal")
}

fn solve_upper_t_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b).expect("factor has nonzero diagonal")
}

/// `(K + s2 I)` with its factor, the jitter that was needed, and `alpha`.
struct Conditioned {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn condition(x: &DMatrix<f64>, y: &DVector<f64>, spec: &KernelSpec, log_noise: f64) -> Result<Conditioned> {
    condition_gram(spec.gram(x)?, y, log_noise)
}

fn condition_gram(mut k: DMatrix<f64>, y: &DVector<f64>, log_noise: f64) -> Result<Conditioned> {
    let s2 = log_noise.exp();
    for i in 0..k.nrows() {
        k[(i, i)] += s2;
    }
    let (chol, jitter) = robust_cholesky(&k)?;
    let alpha = solve_upper_t_vec(&chol, &solve_lower_vec(&chol, y));
    Ok(Conditioned { chol, alpha, jitter })
}

fn lml_value(y: &DVector<f64>, c: &Conditioned) -> f64 {
    let n = y.len() as f64;
    -0.5 * y.dot(&c.alpha) - c.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>() - 0.5 * n * LN_2PI
}

/// Log marginal likelihood `log N(y; 0, K + s2 I)` and its gradient with
/// respect to `[kernel params.., log s2]`.
pub fn log_marginal_likelihood(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &KernelSpec,
    log_noise: f64,
) -> Result<(f64, Vec<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch { left: x.nrows(), right: y.len() });
    }
    let base = (!spec.ard).then(|| iso_base(spec.family, x));
    lml_and_grad(x, y, spec, log_noise, base.as_ref())
}

/// `base` is [`iso_base`] of `x` when the kernel is isotropic; it replaces
/// the `O(n^2 D)` kernel and gradient work with `O(n^2)`.
fn lml_and_grad(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &KernelSpec,
    log_noise: f64,
    base: Option<&DMatrix<f64>>,
) -> Result<(f64, Vec<f64>)> {
    let k = match base {
        Some(b) => spec.gram_from_base(b)?,
        None => spec.gram(x)?,
    };
    let c = condition_gram(k, y, log_noise)?;
    let value = lml_value(y, &c);
    let linv = lower_triangular_inverse(&c.chol);
    let kinv = linv.transpose() * &linv;
    let mut w = &c.alpha * c.alpha.transpose();
    w -= &kinv;
    let contract = match base {
        Some(b) => spec.grad_contract_from_base(b, &w)?,
        None => spec.grad_contract(x, x, &w)?,
    };
    let mut grad: Vec<f64> = contract.into_iter().map(|g| 0.5 * g).collect();
    grad.push(0.5 * log_noise.exp() * w.trace());
    Ok((value, grad))
}

/// Mean Euclidean distance between distinct rows: all pairs for small `n`,
/// a seeded subsample of pairs otherwise. Falls back to 1 when degenerate.
pub fn mean_pairwise_distance(x: &DMatrix<f64>, seed: u64) -> f64 {
    let n = x.nrows();
    let dist = |i: usize, j: usize| (x.row(i) - x.row(j)).norm();
    let mean = if n < 2 {
        0.0
    } else if n <= ALL_PAIRS_LIMIT {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..i {
                total += dist(i, j);
            }
        }
        total / (n * (n - 1) / 2) as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..SUBSAMPLED_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            total += dist(i, j);
        }
        total / SUBSAMPLED_PAIRS as f64
    };
    if mean.is_finite() && mean > 0.0 {
        mean
    } else {
        1.0
    }
}

fn check_finite(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("training features".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("training targets".into()));
    }
    Ok(())
}

/// A conditioned exact GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPState {
    pub x_train: DMatrix<f64>,
    /// Standardized targets.
    pub y_train: DVector<f64>,
    pub spec: KernelSpec,
    pub log_noise_variance: f64,
    /// Lower factor of `K + s2 I (+ jitter)`.
    pub chol: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub jitter: f64,
    pub target_stats: TargetStats,
    pub fit_info: Option<FitInfo>,
}

impl GPState {
    /// Full training recipe: standardize targets, initialize lengthscales at
    /// the mean pairwise distance (replicated per dimension for ARD), signal
    /// variance 1, noise 0.01, then Adam on the negative LML.
    pub fn fit(x: &DMatrix<f64>, y_raw: &[f64], choice: KernelChoice, opt: &OptimizerConfig) -> Result<Self> {
        check_finite(x, y_raw)?;
        let ell = mean_pairwise_distance(x, opt.seed);
        let spec = choice.init(x.ncols(), ell, 1.0);
        Self::fit_from(x, y_raw, spec, opt.fixed_noise.unwrap_or(0.01), opt)
    }

    /// Optimize starting from the given hyperparameters.
    pub fn fit_from(
        x: &DMatrix<f64>,
        y_raw: &[f64],
        spec: KernelSpec,
        noise_variance: f64,
        opt: &OptimizerConfig,
    ) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::TooFewRows { needed: 2, got: x.nrows() });
        }
        if x.nrows() != y_raw.len() {
            return Err(Error::LengthMismatch { left: x.nrows(), right: y_raw.len() });
        }
        check_finite(x, y_raw)?;
        spec.validate()?;
        let stats = TargetStats::fit(y_raw)?;
        let y = stats.standardize_all(y_raw);
        let learn_noise = opt.fixed_noise.is_none();
        let log_floor = NOISE_FLOOR.ln();
        let mut log_noise = match opt.fixed_noise {
            Some(v) => v.ln(),
            None => noise_variance.ln().max(log_floor),
        };

        let mut spec = spec;
        let mut params = spec.params();
        params.push(log_noise);
        let k = spec.num_params();
        let mut adam = Adam::new(params.len(), opt.lr);
        let base = (!spec.ard).then(|| iso_base(spec.family, x));
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut initial = f64::NAN;
        for it in 0..=opt.iters {
            spec.set_params(&params[..k]);
            let (lml, mut grad) = lml_and_grad(x, &y, &spec, params[k], base.as_ref())?;
            let nlml = -lml;
            if it == 0 {
                initial = nlml;
            }
            if nlml.is_finite() && best.as_ref().is_none_or(|(b, _)| nlml < *b) {
                best = Some((nlml, params.clone()));
            }
            if it == opt.iters {
                break;
            }
            if !learn_noise {
                grad[k] = 0.0;
            }
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            if neg.iter().any(|g| !g.is_finite()) {
                log::warn!("non-finite LML gradient at iteration {it}; stopping early");
                break;
            }
            adam.step(&mut params, &neg);
            if learn_noise {
                params[k] = params[k].max(log_floor);
            } else {
                params[k] = log_noise;
            }
        }
        let (final_nlml, best_params) = best.ok_or(Error::NonFiniteInput("log marginal likelihood".into()))?;
        spec.set_params(&best_params[..k]);
        log_noise = best_params[k];
        let mut state = Self::condition(x, y, spec, log_noise, stats)?;
        state.fit_info = Some(FitInfo {
            initial_neg_lml: initial,
            final_neg_lml: final_nlml,
            iterations: opt.iters,
        });
        Ok(state)
    }

    /// Condition on already-standardized targets with fixed hyperparameters.
    pub fn condition(
        x: &DMatrix<f64>,
        y_std: DVector<f64>,
        spec: KernelSpec,
        log_noise_variance: f64,
        target_stats: TargetStats,
    ) -> Result<Self> {
        if x.nrows() != y_std.len() {
            return Err(Error::LengthMismatch { left: x.nrows(), right: y_std.len() });
        }
        let c = condition(x, &y_std, &spec, log_noise_variance)?;
        Ok(GPState {
            x_train: x.clone(),
            y_train: y_std,
            spec,
            log_noise_variance,
            chol: c.chol,
            alpha: c.alpha,
            jitter: c.jitter,
            target_stats,
            fit_info: None,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn num_train(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y_train.len() as f64;
        -0.5 * self.y_train.dot(&self.alpha)
            - self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
            - 0.5 * n * LN_2PI
    }

    pub fn predict(&self, x_test: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        if x_test.ncols() != self.x_train.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "model trained on {} features, got {}",
                self.x_train.ncols(),
                x_test.ncols()
            )));
        }
        let ks = self.spec.matrix(&self.x_train, x_test)?; // n x m
        let mean = ks.tr_mul(&self.alpha);
        let v = solve_lower(&self.chol, &ks);
        let kss = self.spec.diag(x_test)?;
        let s2 = self.noise_variance();
        let var: Vec<f64> = (0..x_test.nrows())
            .map(|j| (kss[j] - v.column(j).norm_squared()).max(0.0) + s2)
            .collect();
        Ok(PredictiveDistribution::from_standardized(
            mean.iter().copied().collect(),
            var,
            self.target_stats,
        ))
    }
}
