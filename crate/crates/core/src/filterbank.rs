//! Fourier-domain Morlet filter banks.
//!
//! Band-pass filters are Morlet wavelets: a Gabor atom with an elongated
//! Gaussian envelope minus a multiple of the envelope so that the DC
//! response vanishes. Filters are sampled on the `N x N` DFT grid with
//! periodization, then the whole band-pass family is rescaled per frequency
//! so that the Littlewood–Paley sum
//!
//! ```text
//! LP(w) = |phi(w)|^2 + 1/2 * sum_{j,l} (|psi_{j,l}(w)|^2 + |psi_{j,l}(-w)|^2)
//! ```
//!
//! equals one wherever the raw Morlet family has any energy. The rescaling is
//! a function of the grid symmetric under `w -> -w` and quarter turns, so the
//! bank stays exactly equivariant to 90-degree rotations when `L` is even.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{bin_frequency, negate_bin};

/// Lower frame bound below which a bank is reported as poorly conditioned.
pub const LP_MIN_THRESHOLD: f64 = 0.90;
/// Allowed overshoot of the upper frame bound.
pub const LP_MAX_SLACK: f64 = 1e-6;

const ALIAS_RANGE: i32 = 2;
const MAX_FRAME_GAIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterBankConfig {
    pub image_size: usize,
    pub num_scales: usize,
    pub num_angles: usize,
    pub sigma0: f64,
    pub xi0: f64,
}

impl FilterBankConfig {
    pub const DEFAULT_SIGMA0: f64 = 0.8;
    pub const DEFAULT_XI0: f64 = 3.0 * PI / 4.0;

    pub fn new(image_size: usize, num_scales: usize, num_angles: usize) -> Self {
        FilterBankConfig {
            image_size,
            num_scales,
            num_angles,
            sigma0: Self::DEFAULT_SIGMA0,
            xi0: Self::DEFAULT_XI0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.image_size;
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "image size {n} is not a power of two >= 2"
            )));
        }
        if self.num_scales < 1 || self.num_scales >= usize::BITS as usize || (1usize << self.num_scales) > n {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= 2^J <= N, got J = {} with N = {n}",
                self.num_scales
            )));
        }
        if self.num_angles < 1 {
            return Err(Error::InvalidConfig("need at least one angle".into()));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma0 = {} must be > 0", self.sigma0)));
        }
        if !(self.xi0 > 0.0 && self.xi0 < PI) {
            return Err(Error::InvalidConfig(format!("xi0 = {} must lie in (0, pi)", self.xi0)));
        }
        Ok(())
    }

    /// Orientation of angle index `l`: `pi * l / L`.
    pub fn angle(&self, l: usize) -> f64 {
        PI * l as f64 / self.num_angles as f64
    }

    pub fn wavelet_sigma(&self, j: usize) -> f64 {
        self.sigma0 * (1u64 << j) as f64
    }

    pub fn wavelet_xi(&self, j: usize) -> f64 {
        self.xi0 / (1u64 << j) as f64
    }

    /// Envelope aspect ratio; `4 / L` following the usual Morlet convention.
    pub fn slant(&self) -> f64 {
        4.0 / self.num_angles as f64
    }

    pub fn lowpass_sigma(&self) -> f64 {
        self.sigma0 * 2f64.powi(self.num_scales as i32 - 1)
    }
}

/// Fourier transform of the (unit-peak) elongated Gaussian envelope.
fn envelope_hat(wx: f64, wy: f64, sigma: f64, theta: f64, slant: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let u = c * wx + s * wy;
    let v = -s * wx + c * wy;
    (-0.5 * sigma * sigma * (u * u + v * v / (slant * slant))).exp()
}

/// Continuous (non-periodized, unnormalized) Morlet Fourier transform at
/// frequency `(wx, wy)` for scale `j` and orientation `theta`.
pub fn morlet_hat(cfg: &FilterBankConfig, j: usize, theta: f64, wx: f64, wy: f64) -> f64 {
    let sigma = cfg.wavelet_sigma(j);
    let xi = cfg.wavelet_xi(j);
    let slant = cfg.slant();
    let (s, c) = theta.sin_cos();
    let kappa = envelope_hat(-xi * c, -xi * s, sigma, theta, slant);
    envelope_hat(wx - xi * c, wy - xi * s, sigma, theta, slant) - kappa * envelope_hat(wx, wy, sigma, theta, slant)
}

fn periodized(wx: f64, wy: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for a in -ALIAS_RANGE..=ALIAS_RANGE {
        for b in -ALIAS_RANGE..=ALIAS_RANGE {
            acc += f(wx + 2.0 * PI * a as f64, wy + 2.0 * PI * b as f64);
        }
    }
    acc
}

/// Raw periodized Morlet filter on the DFT grid, exactly zero at DC, before
/// frame normalization.
pub fn sample_morlet(cfg: &FilterBankConfig, j: usize, l: usize) -> Vec<f64> {
    let n = cfg.image_size;
    let sigma = cfg.wavelet_sigma(j);
    let xi = cfg.wavelet_xi(j);
    let slant = cfg.slant();
    let theta = cfg.angle(l);
    let (s, c) = theta.sin_cos();
    let gabor = |wx: f64, wy: f64| {
        periodized(wx, wy, |x, y| envelope_hat(x - xi * c, y - xi * s, sigma, theta, slant))
    };
    let envelope = |wx: f64, wy: f64| periodized(wx, wy, |x, y| envelope_hat(x, y, sigma, theta, slant));
    let kappa = gabor(0.0, 0.0) / envelope(0.0, 0.0);
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let wy = bin_frequency(r, n);
        for k in 0..n {
            let wx = bin_frequency(k, n);
            out[r * n + k] = if r == 0 && k == 0 {
                0.0
            } else {
                gabor(wx, wy) - kappa * envelope(wx, wy)
            };
        }
    }
    out
}

fn sample_lowpass(cfg: &FilterBankConfig) -> Vec<f64> {
    let n = cfg.image_size;
    let sigma = cfg.lowpass_sigma();
    let g = |wx: f64, wy: f64| periodized(wx, wy, |x, y| (-0.5 * sigma * sigma * (x * x + y * y)).exp());
    let dc = g(0.0, 0.0);
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for k in 0..n {
            out[r * n + k] = g(bin_frequency(k, n), bin_frequency(r, n)) / dc;
        }
    }
    out
}

/// Immutable bank of `J * L` band-pass filters and one low-pass, all stored
/// as real-valued Fourier-domain `N x N` grids (the Morlet transform is real).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    config: FilterBankConfig,
    psi: Vec<Vec<f64>>,
    phi: Vec<f64>,
    lp_min: f64,
    lp_max: f64,
}

impl FilterBank {
    pub fn build(config: FilterBankConfig) -> Result<Self> {
        config.validate()?;
        let n = config.image_size;
        let (num_j, num_l) = (config.num_scales, config.num_angles);
        let mut psi: Vec<Vec<f64>> = (0..num_j * num_l)
            .map(|idx| sample_morlet(&config, idx / num_l, idx % num_l))
            .collect();
        let phi = sample_lowpass(&config);

        let band_energy = band_pass_energy(&psi, n);
        let mut gain = vec![0.0; n * n];
        for (i, g) in gain.iter_mut().enumerate() {
            let target = (1.0 - phi[i] * phi[i]).max(0.0);
            if band_energy[i] > 0.0 {
                *g = (target / band_energy[i]).sqrt().min(MAX_FRAME_GAIN);
            }
        }
        for filter in &mut psi {
            for (v, g) in filter.iter_mut().zip(&gain) {
                *v *= g;
            }
        }
        let bank = Self::from_parts(config, psi, phi)?;
        if !bank.frame_bounds_hold() {
            log::warn!(
                "filter bank N={} J={} L={} has Littlewood-Paley range [{:.4}, {:.6}]",
                n,
                num_j,
                num_l,
                bank.lp_min,
                bank.lp_max
            );
        }
        Ok(bank)
    }

    /// Assembles a bank from explicit filters, recomputing the frame bounds.
    pub fn from_parts(config: FilterBankConfig, psi: Vec<Vec<f64>>, phi: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let n = config.image_size;
        if psi.len() != config.num_scales * config.num_angles {
            return Err(Error::DimensionMismatch(format!(
                "expected {} band-pass filters, got {}",
                config.num_scales * config.num_angles,
                psi.len()
            )));
        }
        if phi.len() != n * n || psi.iter().any(|p| p.len() != n * n) {
            return Err(Error::DimensionMismatch(format!("filters must be {n}x{n}")));
        }
        let lp = lp_sum(&psi, &phi, n);
        let corner = corner_index(n);
        let (mut lp_min, mut lp_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, &v) in lp.iter().enumerate() {
            if i != corner {
                lp_min = lp_min.min(v);
                lp_max = lp_max.max(v);
            }
        }
        Ok(FilterBank {
            config,
            psi,
            phi,
            lp_min,
            lp_max,
        })
    }

    pub fn config(&self) -> &FilterBankConfig {
        &self.config
    }

    pub fn image_size(&self) -> usize {
        self.config.image_size
    }

    pub fn num_scales(&self) -> usize {
        self.config.num_scales
    }

    pub fn num_angles(&self) -> usize {
        self.config.num_angles
    }

    pub fn num_band_pass(&self) -> usize {
        self.psi.len()
    }

    pub fn psi(&self, j: usize, l: usize) -> &[f64] {
        &self.psi[j * self.config.num_angles + l]
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn lp_min(&self) -> f64 {
        self.lp_min
    }

    pub fn lp_max(&self) -> f64 {
        self.lp_max
    }

    /// Lipschitz constant of the scattering transform built on this bank.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lp_max.max(0.0).sqrt()
    }

    pub fn frame_bounds_hold(&self) -> bool {
        self.lp_max <= 1.0 + LP_MAX_SLACK && self.lp_min >= LP_MIN_THRESHOLD
    }

    pub fn into_parts(self) -> (FilterBankConfig, Vec<Vec<f64>>, Vec<f64>) {
        (self.config, self.psi, self.phi)
    }
}

fn corner_index(n: usize) -> usize {
    (n / 2) * n + n / 2
}

/// `1/2 * sum (|psi(w)|^2 + |psi(-w)|^2)` on the grid.
fn band_pass_energy(psi: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n * n];
    for filter in psi {
        for r in 0..n {
            let nr = negate_bin(r, n);
            for k in 0..n {
                let nk = negate_bin(k, n);
                let a = filter[r * n + k];
                let b = filter[nr * n + nk];
                acc[r * n + k] += 0.5 * (a * a + b * b);
            }
        }
    }
    acc
}

fn lp_sum(psi: &[Vec<f64>], phi: &[f64], n: usize) -> Vec<f64> {
    let mut lp = band_pass_energy(psi, n);
    for (v, p) in lp.iter_mut().zip(phi) {
        *v += p * p;
    }
    lp
}

/// Per-frequency Littlewood–Paley statistics of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LittlewoodPaleyReport {
    pub image_size: usize,
    pub num_scales: usize,
    pub num_angles: usize,
    /// LP sum at every grid point, row-major over DFT bins.
    pub values: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `(row, col)` DFT bin of the minimum.
    pub argmin: (usize, usize),
    /// `(wx, wy)` in radians per pixel at the minimum.
    pub argmin_frequency: (f64, f64),
    pub frame_bounds_hold: bool,
}

/// LP sum statistics. The single corner Nyquist bin `(N/2, N/2)` is listed in
/// `values` but excluded from `min`, `max`, and `mean`.
pub fn littlewood_paley_report(bank: &FilterBank) -> LittlewoodPaleyReport {
    let n = bank.image_size();
    let values = lp_sum(&bank.psi, &bank.phi, n);
    let corner = corner_index(n);
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut argmin = 0;
    for (i, &v) in values.iter().enumerate() {
        if i == corner {
            continue;
        }
        if v < min {
            min = v;
            argmin = i;
        }
        max = max.max(v);
        sum += v;
    }
    let (row, col) = (argmin / n, argmin % n);
    LittlewoodPaleyReport {
        image_size: n,
        num_scales: bank.num_scales(),
        num_angles: bank.num_angles(),
        mean: sum / (values.len() - 1) as f64,
        min,
        max,
        argmin: (row, col),
        argmin_frequency: (bin_frequency(col, n), bin_frequency(row, n)),
        frame_bounds_hold: max <= 1.0 + LP_MAX_SLACK && min >= LP_MIN_THRESHOLD,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::Fft2d;

    fn bank(n: usize, j: usize, l: usize) -> FilterBank {
        FilterBank::build(FilterBankConfig::new(n, j, l)).unwrap()
    }

    /// Independent evaluation of the LP sum straight from the definition,
    /// looping over frequencies rather than filters.
    fn lp_oracle(bank: &FilterBank) -> Vec<f64> {
        let n = bank.image_size();
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for k in 0..n {
                let neg = ((n - r) % n) * n + (n - k) % n;
                let mut s = bank.phi()[r * n + k].powi(2);
                for j in 0..bank.num_scales() {
                    for l in 0..bank.num_angles() {
                        let p = bank.psi(j, l);
                        s += 0.5 * (p[r * n + k].powi(2) + p[neg].powi(2));
                    }
                }
                out[r * n + k] = s;
            }
        }
        out
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            FilterBankConfig::new(24, 2, 4),
            FilterBankConfig::new(32, 6, 4),
            FilterBankConfig::new(32, 0, 4),
            FilterBankConfig::new(32, 2, 0),
        ] {
            assert!(matches!(FilterBank::build(cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
        let mut cfg = FilterBankConfig::new(32, 2, 4);
        cfg.xi0 = 4.0;
        assert!(FilterBank::build(cfg).is_err());
    }

    #[test]
    fn counts_filters() {
        let b = bank(32, 3, 8);
        assert_eq!(b.num_band_pass(), 24);
        assert_eq!(b.phi().len(), 32 * 32);
    }

    #[test]
    fn zero_mean_and_unit_dc() {
        for (n, j, l) in [(32, 3, 8), (16, 2, 4), (64, 5, 6), (8, 3, 1)] {
            let b = bank(n, j, l);
            assert!((b.phi()[0] - 1.0).abs() < 1e-15);
            for jj in 0..j {
                for ll in 0..l {
                    let p = b.psi(jj, ll);
                    let peak = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    assert!(p[0].abs() <= 1e-6 * peak);
                }
            }
        }
    }

    #[test]
    fn frame_bounds_match_oracle() {
        let b = bank(32, 3, 8);
        let oracle = lp_oracle(&b);
        let corner = 16 * 32 + 16;
        let max = oracle.iter().enumerate().filter(|(i, _)| *i != corner).map(|(_, v)| *v).fold(f64::MIN, f64::max);
        let min = oracle.iter().enumerate().filter(|(i, _)| *i != corner).map(|(_, v)| *v).fold(f64::MAX, f64::min);
        assert!(max <= 1.0 + 1e-6, "max {max}");
        assert!(min >= 0.90, "min {min}");
        assert!((b.lp_max() - max).abs() < 1e-12);
        assert!((b.lp_min() - min).abs() < 1e-12);
        assert!(b.frame_bounds_hold());
    }

    #[test]
    fn report_lists_grid() {
        let b = bank(32, 3, 8);
        let rep = littlewood_paley_report(&b);
        assert_eq!(rep.values.len(), 1024);
        assert!(rep.max <= 1.0 + 1e-6);
        assert!(rep.frame_bounds_hold);
        assert!(rep.min <= rep.mean && rep.mean <= rep.max);
    }

    #[test]
    fn zeroed_lowpass_loses_dc() {
        let (cfg, psi, phi) = bank(32, 3, 8).into_parts();
        let b = FilterBank::from_parts(cfg, psi, vec![0.0; phi.len()]).unwrap();
        let rep = littlewood_paley_report(&b);
        assert!(rep.min < 1e-12);
        assert_eq!(rep.argmin, (0, 0));
        assert!(!rep.frame_bounds_hold);
    }

    #[test]
    fn single_angle_bank_is_flagged() {
        let b = bank(32, 1, 1);
        assert!(!b.frame_bounds_hold());
        assert!(b.lp_max() <= 1.0 + 1e-6);
    }

    #[test]
    fn spatial_wavelets_have_zero_mean() {
        let b = bank(32, 3, 8);
        let fft = Fft2d::new(32);
        for j in 0..3 {
            for l in 0..8 {
                let mut buf: Vec<_> = b.psi(j, l).iter().map(|&v| rustfft::num_complex::Complex64::new(v, 0.0)).collect();
                fft.inverse(&mut buf);
                let mean = buf.iter().sum::<rustfft::num_complex::Complex64>() / buf.len() as f64;
                let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.norm()));
                assert!(mean.norm() <= 1e-6 * peak);
            }
        }
    }

    #[test]
    fn quarter_turn_equivariance_on_grid() {
        // psi_{j, l + L/2}(w) == psi_{j, l}(R_{-90} w) for even L
        let n = 32;
        let b = bank(n, 3, 8);
        for j in 0..3 {
            for l in 0..4 {
                let a = b.psi(j, l);
                let c = b.psi(j, l + 4);
                for r in 0..n {
                    for k in 0..n {
                        // (wx, wy) -> (wy, -wx)
                        let (rr, kk) = (negate_bin(k, n), r);
                        assert!((c[r * n + k] - a[rr * n + kk]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_consistency_of_generator() {
        // sample psi_{j,0} on a refined grid, rotate by interpolation, compare
        let cfg = FilterBankConfig::new(32, 3, 8);
        let refine = 512;
        let span = 2.0 * PI;
        let h = span / refine as f64;
        for j in 0..3 {
            let grid: Vec<f64> = (0..=refine)
                .flat_map(|r| (0..=refine).map(move |k| (r, k)))
                .map(|(r, k)| morlet_hat(&cfg, j, 0.0, -PI + k as f64 * h, -PI + r as f64 * h))
                .collect();
            let interp = |wx: f64, wy: f64| {
                let fx = (wx + PI) / h;
                let fy = (wy + PI) / h;
                let (k0, r0) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (fx - k0 as f64, fy - r0 as f64);
                let at = |r: usize, k: usize| grid[r.min(refine) * (refine + 1) + k.min(refine)];
                (1.0 - ty) * ((1.0 - tx) * at(r0, k0) + tx * at(r0, k0 + 1)) + ty * ((1.0 - tx) * at(r0 + 1, k0) + tx * at(r0 + 1, k0 + 1))
            };
            for l in 1..8 {
                let theta = cfg.angle(l);
                let (s, c) = theta.sin_cos();
                let mut peak = 0.0f64;
                let mut worst = 0.0f64;
                for r in 0..64 {
                    for k in 0..64 {
                        let wx = -PI / 2.0 + PI * k as f64 / 64.0;
                        let wy = -PI / 2.0 + PI * r as f64 / 64.0;
                        let direct = morlet_hat(&cfg, j, theta, wx, wy);
                        let (ux, uy) = (c * wx + s * wy, -s * wx + c * wy);
                        let rotated = interp(ux, uy);
                        peak = peak.max(direct.abs());
                        worst = worst.max((direct - rotated).abs());
                    }
                }
                assert!(worst <= 1e-3 * peak, "j={j} l={l}: {worst} vs peak {peak}");
            }
        }
    }

    fn centre_frequency(p: &[f64], n: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..n {
            for k in 0..n {
                let w = (bin_frequency(k, n).powi(2) + bin_frequency(r, n).powi(2)).sqrt();
                let e = p[r * n + k].powi(2);
                num += e * w;
                den += e;
            }
        }
        num / den
    }

    #[test]
    fn dilation_halves_centre_frequency() {
        for (n, num_j, num_l) in [(64, 5, 8), (32, 3, 8), (32, 4, 4), (128, 6, 8)] {
            let cfg = FilterBankConfig::new(n, num_j, num_l);
            for l in 0..num_l {
                for j in 0..num_j - 1 {
                    let ratio = centre_frequency(&sample_morlet(&cfg, j + 1, l), n)
                        / centre_frequency(&sample_morlet(&cfg, j, l), n);
                    assert!((ratio - 0.5).abs() <= 0.05, "N={n} j={j} l={l} ratio {ratio}");
                }
            }
        }
    }

    #[test]
    fn normalized_bank_keeps_dilation_above_finest_scale() {
        // the finest scale absorbs the grid-corner energy and drifts ~11%
        let n = 64;
        let b = bank(n, 5, 8);
        for l in 0..8 {
            for j in 1..4 {
                let ratio = centre_frequency(b.psi(j + 1, l), n) / centre_frequency(b.psi(j, l), n);
                assert!((ratio - 0.5).abs() <= 0.05, "j={j} l={l} ratio {ratio}");
            }
        }
    }
}
