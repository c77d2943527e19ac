//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod gpo;
pub mod scat;
pub mod svgpo;

use std::f64::consts::PI;

use bayes_scatter::fft::Fft2d;
use bayes_scatter::image::Image;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn white_noise_image(rng: &mut ChaCha8Rng, channels: usize, n: usize, scale: f64) -> Image {
    Image::from_fn(channels, n, |_, _, _| scale * rng.random_range(-1.0..1.0))
}

/// An analytic image `f(y, x)` that can be sampled at arbitrary points, so
/// deformed copies are exact rather than resampled.
pub trait Scene {
    fn eval(&self, y: f64, x: f64) -> f64;

    fn render(&self, n: usize) -> Image {
        Image::from_fn(1, n, |_, r, k| self.eval(r as f64, k as f64))
    }

    /// `f(x - t v(x))` for the periodic dilating field
    /// `v(p) = amp * sin(2 pi (p - N/2) / N)` applied per axis; zero
    /// displacement at the centre and the borders, expansion in between.
    fn render_deformed(&self, n: usize, t: f64, amp: f64) -> Image {
        let c = n as f64 / 2.0;
        let v = |p: f64| amp * (2.0 * PI * (p - c) / n as f64).sin();
        Image::from_fn(1, n, |_, r, k| {
            let (y, x) = (r as f64, k as f64);
            self.eval(y - t * v(y), x - t * v(x))
        })
    }
}

/// Sum of isotropic Gaussian bumps kept away from the borders.
pub struct Blobs {
    pub bumps: Vec<(f64, f64, f64, f64)>,
}

impl Blobs {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let k = rng.random_range(3..=6);
        let lo = n as f64 * 0.3;
        let hi = n as f64 * 0.7;
        let bumps = (0..k)
            .map(|_| {
                (
                    rng.random_range(lo..hi),
                    rng.random_range(lo..hi),
                    rng.random_range(1.5..3.5),
                    rng.random_range(0.5..1.5),
                )
            })
            .collect();
        Blobs { bumps }
    }
}

impl Scene for Blobs {
    fn eval(&self, y: f64, x: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(cy, cx, s, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
            .sum()
    }
}

/// A plane wave at angular frequency `omega` under a wide Gaussian envelope:
/// content concentrated at the finest wavelet scale.
pub struct Texture {
    pub omega: f64,
    pub theta: f64,
    pub width: f64,
    pub centre: f64,
}

impl Scene for Texture {
    fn eval(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.centre, x - self.centre);
        let env = (-(dy * dy + dx * dx) / (2.0 * self.width * self.width)).exp();
        env * (self.omega * (dx * self.theta.cos() + dy * self.theta.sin())).cos()
    }
}

/// `|DFT f| / N^2`: scaled so that, like scattering, it is 1-Lipschitz from
/// the RMS image norm to the Euclidean feature norm.
pub fn fourier_modulus(img: &Image) -> Vec<f64> {
    let n = img.size();
    let fft = Fft2d::new(n);
    fft.forward_real(img.channel(0)).iter().map(|c| c.norm() / (n * n) as f64).collect()
}

/// Random regression problem with inputs in `[-2, 2]^d`.
pub fn gp_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0f64..2.0));
    let y = DVector::from_fn(n, |i, _| (x.row(i).sum()).sin() + 0.2 * rng.random_range(-1.0f64..1.0));
    (x, y)
}
