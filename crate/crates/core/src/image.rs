//! Multi-channel square images stored as dense `f64` planes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `C`-channel `N x N` real image. Pixels are stored channel-major, then
/// row-major: index `(c * N + row) * N + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    size: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(channels: usize, size: usize) -> Self {
        Image {
            channels,
            size,
            data: vec![0.0; channels * size * size],
        }
    }

    pub fn from_vec(channels: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || size == 0 {
            return Err(Error::InvalidConfig(
                "image must have at least one channel and one pixel".into(),
            ));
        }
        if data.len() != channels * size * size {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot fill a {channels}x{size}x{size} image",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            size,
            data,
        })
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every pixel.
    pub fn from_fn(channels: usize, size: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * size * size);
        for c in 0..channels {
            for r in 0..size {
                for k in 0..size {
                    data.push(f(c, r, k));
                }
            }
        }
        Image {
            channels,
            size,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.size * self.size;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.size * self.size;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.size + row) * self.size + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, row: usize, col: usize, value: f64) {
        self.data[(c * self.size + row) * self.size + col] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Root-mean-square norm, summed in quadrature over channels. This is the
    /// discrete L2 norm matching mean-normalized averaging.
    pub fn rms_norm(&self) -> f64 {
        let plane = (self.size * self.size) as f64;
        (self.data.iter().map(|v| v * v).sum::<f64>() / plane).sqrt()
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        if self.channels != other.channels || self.size != other.size {
            return Err(Error::DimensionMismatch("images differ in shape".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Image {
            channels: self.channels,
            size: self.size,
            data,
        })
    }

    /// Circular shift: output pixel `(r, k)` takes input pixel
    /// `(r - dr, k - dk)` modulo `N`.
    pub fn shift_circular(&self, dr: isize, dk: isize) -> Image {
        let n = self.size as isize;
        let mut out = Image::zeros(self.channels, self.size);
        for c in 0..self.channels {
            for r in 0..n {
                for k in 0..n {
                    let sr = (r - dr).rem_euclid(n) as usize;
                    let sk = (k - dk).rem_euclid(n) as usize;
                    out.set(c, r as usize, k as usize, self.get(c, sr, sk));
                }
            }
        }
        out
    }

    /// Rotation by `quarter_turns * 90` degrees counter-clockwise. Exact on
    /// the pixel grid.
    pub fn rotate90(&self, quarter_turns: i32) -> Image {
        let n = self.size;
        let mut out = self.clone();
        for _ in 0..quarter_turns.rem_euclid(4) {
            let src = out.clone();
            for c in 0..self.channels {
                for r in 0..n {
                    for k in 0..n {
                        out.set(c, r, k, src.get(c, k, n - 1 - r));
                    }
                }
            }
        }
        out
    }

    /// Rotation by an arbitrary angle about the image centre with bilinear
    /// resampling and periodic wrap-around.
    pub fn rotate_bilinear(&self, theta: f64) -> Image {
        let n = self.size;
        let centre = (n as f64 - 1.0) / 2.0;
        let (s, c) = theta.sin_cos();
        let mut out = Image::zeros(self.channels, n);
        for ch in 0..self.channels {
            for r in 0..n {
                for k in 0..n {
                    let y = r as f64 - centre;
                    let x = k as f64 - centre;
                    // inverse map: rotate output coordinate back by -theta
                    let sx = c * x - s * y + centre;
                    let sy = s * x + c * y + centre;
                    out.set(ch, r, k, self.sample_bilinear(ch, sy, sx));
                }
            }
        }
        out
    }

    fn sample_bilinear(&self, c: usize, y: f64, x: f64) -> f64 {
        let n = self.size as isize;
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let wrap = |v: f64| (v as isize).rem_euclid(n) as usize;
        let (r0, r1) = (wrap(y0), wrap(y0 + 1.0));
        let (k0, k1) = (wrap(x0), wrap(x0 + 1.0));
        (1.0 - fy) * ((1.0 - fx) * self.get(c, r0, k0) + fx * self.get(c, r0, k1))
            + fy * ((1.0 - fx) * self.get(c, r1, k0) + fx * self.get(c, r1, k1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        Image::from_fn(2, 4, |c, r, k| (c * 100 + r * 10 + k) as f64)
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = ramp();
        assert_eq!(img.rotate90(4), img);
        assert_eq!(img.rotate90(1).rotate90(3), img);
        assert_ne!(img.rotate90(1), img);
    }

    #[test]
    fn shift_wraps() {
        let img = ramp();
        let s = img.shift_circular(1, -1);
        assert_eq!(s.get(0, 1, 0), img.get(0, 0, 1));
        assert_eq!(s.get(1, 0, 3), img.get(1, 3, 0));
        assert_eq!(s.shift_circular(-1, 1), img);
    }

    #[test]
    fn bilinear_quarter_turn_matches_exact() {
        let img = ramp();
        let a = img.rotate_bilinear(std::f64::consts::FRAC_PI_2);
        let b = img.rotate90(1);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Image::from_vec(1, 3, vec![0.0; 8]).is_err());
        assert!(Image::from_vec(1, 3, vec![0.0; 9]).is_ok());
    }
}
