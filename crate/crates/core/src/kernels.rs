//! Covariance functions with log-domain hyperparameters.
//!
//! Hyperparameter vectors are laid out as `[log l_1, .., log l_k, log s2]`
//! with `k = 1` for isotropic kernels and `k = D` for ARD kernels.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Matern52,
    Linear,
}

impl KernelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Linear => "linear",
        }
    }

    fn is_stationary(self) -> bool {
        self != KernelFamily::Linear
    }
}

/// A kernel family plus the ARD switch, as selected on the command line
/// (`rbf`, `matern52,ard`, ...). Becomes a [`KernelSpec`] once the feature
/// dimension and initial lengthscale are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelChoice {
    pub family: KernelFamily,
    pub ard: bool,
}

impl KernelChoice {
    pub fn new(family: KernelFamily, ard: bool) -> Self {
        KernelChoice { family, ard }
    }

    pub fn init(&self, dim: usize, lengthscale: f64, signal_variance: f64) -> KernelSpec {
        let k = if self.ard { dim } else { 1 };
        KernelSpec {
            family: self.family,
            ard: self.ard,
            log_lengthscales: vec![lengthscale.ln(); k],
            log_signal_variance: signal_variance.ln(),
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.family.as_str(), if self.ard { ",ard" } else { "" })
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let family = match parts.next().unwrap_or("") {
            "rbf" => KernelFamily::Rbf,
            "matern52" | "matern" => KernelFamily::Matern52,
            "linear" => KernelFamily::Linear,
            other => return Err(Error::InvalidConfig(format!("unknown kernel '{other}'"))),
        };
        let ard = match parts.next() {
            None => false,
            Some("ard") => true,
            Some(other) => return Err(Error::InvalidConfig(format!("unknown kernel modifier '{other}'"))),
        };
        if parts.next().is_some() {
            return Err(Error::InvalidConfig(format!("malformed kernel '{s}'")));
        }
        Ok(KernelChoice { family, ard })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub ard: bool,
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
}

impl KernelSpec {
    pub fn isotropic(family: KernelFamily, lengthscale: f64, signal_variance: f64) -> Self {
        KernelChoice::new(family, false).init(1, lengthscale, signal_variance)
    }

    pub fn ard(family: KernelFamily, lengthscales: &[f64], signal_variance: f64) -> Self {
        KernelSpec {
            family,
            ard: true,
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
        }
    }

    pub fn choice(&self) -> KernelChoice {
        KernelChoice::new(self.family, self.ard)
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn num_params(&self) -> usize {
        self.log_lengthscales.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.log_lengthscales.clone();
        p.push(self.log_signal_variance);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "kernel parameter count");
        let k = self.log_lengthscales.len();
        self.log_lengthscales.copy_from_slice(&params[..k]);
        self.log_signal_variance = params[k];
    }

    pub fn validate(&self) -> Result<()> {
        let expected_one = !self.ard;
        if self.log_lengthscales.is_empty() || (expected_one && self.log_lengthscales.len() != 1) {
            return Err(Error::InvalidConfig(format!(
                "{} kernel with ard={} has {} lengthscales",
                self.family.as_str(),
                self.ard,
                self.log_lengthscales.len()
            )));
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteInput("kernel hyperparameters".into()));
        }
        Ok(())
    }

    fn check_inputs(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
        self.validate()?;
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} and {} columns",
                a.ncols(),
                b.ncols()
            )));
        }
        if self.ard && self.log_lengthscales.len() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "ARD kernel has {} lengthscales but inputs have {} columns",
                self.log_lengthscales.len(),
                a.ncols()
            )));
        }
        Ok(())
    }

    fn lengthscale(&self, d: usize) -> f64 {
        if self.ard {
            self.log_lengthscales[d].exp()
        } else {
            self.log_lengthscales[0].exp()
        }
    }

    fn scaled(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (d, mut col) in out.column_iter_mut().enumerate() {
            col /= self.lengthscale(d);
        }
        out
    }

    /// Squared lengthscale-weighted distances between scaled inputs.
    fn sq_dist(as_: &DMatrix<f64>, bs: &DMatrix<f64>) -> DMatrix<f64> {
        let na: Vec<f64> = as_.row_iter().map(|r| r.norm_squared()).collect();
        let nb: Vec<f64> = bs.row_iter().map(|r| r.norm_squared()).collect();
        let mut g = as_ * bs.transpose();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                g[(i, j)] = (na[i] + nb[j] - 2.0 * g[(i, j)]).max(0.0);
            }
        }
        g
    }

    /// Covariance and, for stationary kernels, the radial derivative factor
    /// `F` with `dK/dlog l_d = F * delta_d^2 / l_d^2`.
    fn matrix_parts(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, Option<DMatrix<f64>>, DMatrix<f64>, DMatrix<f64>) {
        let s2 = self.signal_variance();
        let as_ = self.scaled(a);
        let bs = self.scaled(b);
        match self.family {
            KernelFamily::Rbf => {
                let r2 = Self::sq_dist(&as_, &bs);
                let k = r2.map(|v| s2 * (-0.5 * v).exp());
                (k.clone(), Some(k), as_, bs)
            }
            KernelFamily::Matern52 => {
                let r2 = Self::sq_dist(&as_, &bs);
                let k = r2.map(|v| {
                    let r = v.sqrt();
                    s2 * (1.0 + SQRT5 * r + 5.0 * v / 3.0) * (-SQRT5 * r).exp()
                });
                let f = r2.map(|v| {
                    let r = v.sqrt();
                    s2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
                });
                (k, Some(f), as_, bs)
            }
            KernelFamily::Linear => {
                let k = (&as_ * bs.transpose()) * s2;
                (k, None, as_, bs)
            }
        }
    }

    /// `K(A, B)` for row-sample matrices `A` (n x D) and `B` (m x D).
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(a, b)?;
        Ok(self.matrix_parts(a, b).0)
    }

    /// `K(A, A)`, mirrored so it is exactly symmetric.
    pub fn gram(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut k = self.matrix(a, a)?;
        symmetrize(&mut k);
        Ok(k)
    }

    /// `k(x_i, x_i)` for every row.
    pub fn diag(&self, a: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_inputs(a, a)?;
        let s2 = self.signal_variance();
        Ok(match self.family {
            KernelFamily::Linear => {
                let as_ = self.scaled(a);
                DVector::from_iterator(a.nrows(), as_.row_iter().map(|r| s2 * r.norm_squared()))
            }
            _ => DVector::from_element(a.nrows(), s2),
        })
    }

    /// Element-wise `dK/dtheta` for every log-hyperparameter, in the order of
    /// [`KernelSpec::params`].
    pub fn gradients(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_inputs(a, b)?;
        let (k, f, _, _) = self.matrix_parts(a, b);
        let s2 = self.signal_variance();
        let (n, m) = (a.nrows(), b.nrows());
        let dims = a.ncols();
        let mut out = Vec::with_capacity(self.num_params());
        let per_dim = |d: usize| {
            let l2 = self.lengthscale(d).powi(2);
            DMatrix::from_fn(n, m, |i, j| {
                let delta = a[(i, d)] - b[(j, d)];
                match &f {
                    Some(f) => f[(i, j)] * delta * delta / l2,
                    None => -2.0 * s2 * a[(i, d)] * b[(j, d)] / l2,
                }
            })
        };
        if self.ard {
            for d in 0..dims {
                out.push(per_dim(d));
            }
        } else {
            let mut acc = DMatrix::zeros(n, m);
            for d in 0..dims {
                acc += per_dim(d);
            }
            out.push(acc);
        }
        out.push(k);
        Ok(out)
    }

    /// `sum_ij W_ij dK_ij/dtheta` for every hyperparameter without forming the
    /// per-parameter matrices.
    pub fn grad_contract(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_inputs(a, b)?;
        check_weights(w, a.nrows(), b.nrows())?;
        let (k, f, as_, bs) = self.matrix_parts(a, b);
        let s2 = self.signal_variance();
        let mut out = Vec::with_capacity(self.num_params());
        match f {
            Some(f) => {
                let m = w.component_mul(&f);
                let rows = row_sums(&m);
                let cols = col_sums(&m);
                let mb = &m * &bs;
                let per_dim: Vec<f64> = (0..as_.ncols())
                    .map(|d| {
                        let mut g = 0.0;
                        for i in 0..as_.nrows() {
                            g += as_[(i, d)] * (as_[(i, d)] * rows[i] - 2.0 * mb[(i, d)]);
                        }
                        for j in 0..bs.nrows() {
                            g += bs[(j, d)] * bs[(j, d)] * cols[j];
                        }
                        g
                    })
                    .collect();
                push_lengthscale_grads(&mut out, per_dim, self.ard);
            }
            None => {
                let wb = w * &bs;
                let per_dim: Vec<f64> = (0..as_.ncols())
                    .map(|d| -2.0 * s2 * as_.column(d).dot(&wb.column(d)))
                    .collect();
                push_lengthscale_grads(&mut out, per_dim, self.ard);
            }
        }
        out.push(w.component_mul(&k).sum());
        Ok(out)
    }

    /// Gram matrix of an isotropic kernel from [`iso_base`] of its inputs:
    /// `O(n^2)` instead of `O(n^2 D)`.
    pub fn gram_from_base(&self, base: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_iso_base(base)?;
        let s2 = self.signal_variance();
        let inv_l2 = (-2.0 * self.log_lengthscales[0]).exp();
        Ok(match self.family {
            KernelFamily::Rbf => base.map(|d2| s2 * (-0.5 * d2 * inv_l2).exp()),
            KernelFamily::Matern52 => base.map(|d2| {
                let v = d2 * inv_l2;
                let r = v.sqrt();
                s2 * (1.0 + SQRT5 * r + 5.0 * v / 3.0) * (-SQRT5 * r).exp()
            }),
            KernelFamily::Linear => base * (s2 * inv_l2),
        })
    }

    /// [`KernelSpec::grad_contract`] for an isotropic kernel on the inputs
    /// whose [`iso_base`] is `base`.
    pub fn grad_contract_from_base(&self, base: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_iso_base(base)?;
        check_weights(w, base.nrows(), base.ncols())?;
        let s2 = self.signal_variance();
        let inv_l2 = (-2.0 * self.log_lengthscales[0]).exp();
        let k = self.gram_from_base(base)?;
        let wk = w.component_mul(&k).sum();
        let dl = match self.family {
            // dK/dlog l = F r^2 with F the radial factor of `matrix_parts`
            KernelFamily::Rbf => w.zip_zip_map(&k, base, |wi, ki, d2| wi * ki * d2 * inv_l2).sum(),
            KernelFamily::Matern52 => w
                .zip_map(base, |wi, d2| {
                    let v = d2 * inv_l2;
                    let r = v.sqrt();
                    wi * s2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp() * v
                })
                .sum(),
            KernelFamily::Linear => -2.0 * wk,
        };
        Ok(vec![dl, wk])
    }

    fn check_iso_base(&self, base: &DMatrix<f64>) -> Result<()> {
        self.validate()?;
        if self.ard {
            return Err(Error::InvalidConfig("precomputed pairwise base needs an isotropic kernel".into()));
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("pairwise base".into()));
        }
        Ok(())
    }

    /// `(dA, dB)` with `dA_id = sum_j W_ij dK_ij/dA_id` and likewise for `B`.
    pub fn input_grad_contract(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_inputs(a, b)?;
        check_weights(w, a.nrows(), b.nrows())?;
        let (_, f, as_, bs) = self.matrix_parts(a, b);
        let s2 = self.signal_variance();
        let dims = a.ncols();
        let (mut ga, mut gb) = match f {
            Some(f) => {
                let m = w.component_mul(&f);
                let rows = row_sums(&m);
                let cols = col_sums(&m);
                let mb = &m * &bs;
                let mta = m.transpose() * &as_;
                let mut ga = DMatrix::zeros(a.nrows(), dims);
                let mut gb = DMatrix::zeros(b.nrows(), dims);
                for d in 0..dims {
                    for i in 0..a.nrows() {
                        ga[(i, d)] = -(as_[(i, d)] * rows[i] - mb[(i, d)]);
                    }
                    for j in 0..b.nrows() {
                        gb[(j, d)] = mta[(j, d)] - bs[(j, d)] * cols[j];
                    }
                }
                (ga, gb)
            }
            None => ((w * &bs) * s2, (w.transpose() * &as_) * s2),
        };
        for d in 0..dims {
            let l = self.lengthscale(d);
            ga.column_mut(d).scale_mut(1.0 / l);
            gb.column_mut(d).scale_mut(1.0 / l);
        }
        Ok((ga, gb))
    }

    /// Contractions of the diagonal `k(x_i, x_i)` against weights `w_i`:
    /// hyperparameter gradients and input gradients.
    pub fn diag_grad_contract(&self, a: &DMatrix<f64>, w: &DVector<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_inputs(a, a)?;
        if w.len() != a.nrows() {
            return Err(Error::DimensionMismatch("diagonal weights length".into()));
        }
        let s2 = self.signal_variance();
        let dims = a.ncols();
        let mut out = Vec::with_capacity(self.num_params());
        let mut ga = DMatrix::zeros(a.nrows(), dims);
        if self.family.is_stationary() {
            out.extend(std::iter::repeat_n(0.0, self.log_lengthscales.len()));
            out.push(s2 * w.sum());
        } else {
            let as_ = self.scaled(a);
            let per_dim: Vec<f64> = (0..dims)
                .map(|d| -2.0 * s2 * (0..a.nrows()).map(|i| w[i] * as_[(i, d)].powi(2)).sum::<f64>())
                .collect();
            push_lengthscale_grads(&mut out, per_dim, self.ard);
            out.push((0..a.nrows()).map(|i| w[i] * s2 * as_.row(i).norm_squared()).sum());
            for d in 0..dims {
                let l = self.lengthscale(d);
                for i in 0..a.nrows() {
                    ga[(i, d)] = 2.0 * s2 * w[i] * as_[(i, d)] / l;
                }
            }
        }
        Ok((out, ga))
    }
}

fn push_lengthscale_grads(out: &mut Vec<f64>, per_dim: Vec<f64>, ard: bool) {
    if ard {
        out.extend(per_dim);
    } else {
        out.push(per_dim.iter().sum());
    }
}

fn check_weights(w: &DMatrix<f64>, n: usize, m: usize) -> Result<()> {
    if w.shape() != (n, m) {
        return Err(Error::DimensionMismatch(format!(
            "weights are {:?}, expected ({n}, {m})",
            w.shape()
        )));
    }
    Ok(())
}

/// Hyperparameter-free pairwise statistic of the rows of `x`: squared
/// distances for stationary families, inner products for the linear one.
/// An isotropic kernel sees its inputs only through this matrix, so an
/// optimizer can compute it once instead of once per step.
pub fn iso_base(family: KernelFamily, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = if family.is_stationary() {
        let mut d = KernelSpec::sq_dist(x, x);
        d.fill_diagonal(0.0);
        d
    } else {
        x * x.transpose()
    };
    symmetrize(&mut b);
    b
}

fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.sum()).collect()
}

fn col_sums(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.sum()).collect()
}

pub(crate) fn symmetrize(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}
