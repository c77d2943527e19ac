//! Square 2-D FFTs on top of `rustfft`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for `N x N` row-major complex buffers. The
/// inverse is normalized by `1 / N^2` so `inverse(forward(x)) == x`.
#[derive(Clone)]
pub struct Fft2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d").field("n", &self.n).finish()
    }
}

impl Fft2d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2d {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.apply(&*self.forward, buf);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.apply(&*self.inverse, buf);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    fn apply(&self, fft: &dyn Fft<f64>, buf: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(buf.len(), n * n, "buffer is not {n}x{n}");
        // rows
        fft.process(buf);
        transpose_in_place(buf, n);
        // columns, now contiguous
        fft.process(buf);
        transpose_in_place(buf, n);
    }
}

fn transpose_in_place(buf: &mut [Complex64], n: usize) {
    for r in 0..n {
        for k in (r + 1)..n {
            buf.swap(r * n + k, k * n + r);
        }
    }
}

/// Angular frequency in radians per pixel of DFT bin `k` on an `n`-point
/// grid, in `[-pi, pi)`.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * signed / n as f64
}

/// Index of `-k` modulo `n`.
#[inline]
pub fn negate_bin(k: usize, n: usize) -> usize {
    (n - k) % n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let n = 8;
        let fft = Fft2d::new(n);
        let input: Vec<f64> = (0..n * n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let mut buf = fft.forward_real(&input);
        fft.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&input) {
            assert!((a.re - b).abs() < 1e-12 && a.im.abs() < 1e-12);
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let n = 4;
        let fft = Fft2d::new(n);
        let input: Vec<f64> = (0..n * n).map(|i| i as f64).collect();
        let buf = fft.forward_real(&input);
        assert!((buf[0].re - input.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn frequencies() {
        assert_eq!(bin_frequency(0, 8), 0.0);
        assert!((bin_frequency(4, 8) + std::f64::consts::PI).abs() < 1e-15);
        assert!((bin_frequency(7, 8) + std::f64::consts::PI / 4.0).abs() < 1e-15);
        assert_eq!(negate_bin(0, 8), 0);
        assert_eq!(negate_bin(3, 8), 5);
    }
}
