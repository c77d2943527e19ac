//! Order 0/1/2 scattering coefficients: windowed, globally averaged, and
//! rotation-invariant.
//!
//! All wavelet convolutions run at full `N x N` resolution with circular
//! boundary conditions; only the final low-pass output of the windowed
//! variant is subsampled, with stride `2^J`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::filterbank::{FilterBank, FilterBankConfig};
use crate::image::Image;

pub const MAX_ORDER: usize = 2;

/// A scattering path: strictly increasing scales, with one angle index per
/// scale, or no angles at all for rotation-averaged paths.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    scales: Vec<usize>,
    angles: Vec<usize>,
}

impl Path {
    pub fn order_zero() -> Self {
        Path {
            scales: Vec::new(),
            angles: Vec::new(),
        }
    }

    pub fn new(scales: Vec<usize>, angles: Option<Vec<usize>>) -> Result<Self> {
        if scales.len() > MAX_ORDER {
            return Err(Error::InvalidConfig(format!("path of length {} exceeds {MAX_ORDER}", scales.len())));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("path scales must strictly increase".into()));
        }
        let angles = angles.unwrap_or_default();
        if !angles.is_empty() && angles.len() != scales.len() {
            return Err(Error::InvalidConfig("one angle per scale required".into()));
        }
        Ok(Path { scales, angles })
    }

    pub fn order(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    /// `None` for angle-free (rotation-averaged) paths.
    pub fn angles(&self) -> Option<&[usize]> {
        if self.angles.is_empty() && !self.scales.is_empty() {
            None
        } else {
            Some(&self.angles)
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scales.is_empty() {
            return write!(f, "()");
        }
        let parts: Vec<String> = match self.angles() {
            Some(a) => self.scales.iter().zip(a).map(|(j, l)| format!("({j},{l})")).collect(),
            None => self.scales.iter().map(|j| format!("({j},*)")).collect(),
        };
        write!(f, "{}", parts.join(""))
    }
}

fn scale_tuples(num_scales: usize, order: usize) -> Vec<Vec<usize>> {
    match order {
        0 => vec![Vec::new()],
        1 => (0..num_scales).map(|j| vec![j]).collect(),
        _ => {
            let mut out = Vec::new();
            for j1 in 0..num_scales {
                for j2 in (j1 + 1)..num_scales {
                    out.push(vec![j1, j2]);
                }
            }
            out
        }
    }
}

fn angle_tuples(num_angles: usize, order: usize) -> Vec<Vec<usize>> {
    match order {
        0 => vec![Vec::new()],
        1 => (0..num_angles).map(|l| vec![l]).collect(),
        _ => (0..num_angles)
            .flat_map(|l1| (0..num_angles).map(move |l2| vec![l1, l2]))
            .collect(),
    }
}

/// All admissible paths of order `1..=max_order`, ordered by order, then
/// scales, then angles.
pub fn enumerate_paths(num_scales: usize, num_angles: usize, max_order: usize, rotation_invariant: bool) -> Vec<Path> {
    let mut out = Vec::new();
    for m in 1..=max_order.min(MAX_ORDER) {
        for scales in scale_tuples(num_scales, m) {
            if rotation_invariant {
                out.push(Path {
                    scales,
                    angles: Vec::new(),
                });
            } else {
                for angles in angle_tuples(num_angles, m) {
                    out.push(Path {
                        scales: scales.clone(),
                        angles,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Windowed,
    Global,
    #[serde(rename = "rotinv")]
    GlobalRotationInvariant,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Windowed => "windowed",
            Variant::Global => "global",
            Variant::GlobalRotationInvariant => "rotinv",
        }
    }

    pub fn is_rotation_invariant(self) -> bool {
        self == Variant::GlobalRotationInvariant
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed" => Ok(Variant::Windowed),
            "global" => Ok(Variant::Global),
            "rotinv" | "global_rotation_invariant" => Ok(Variant::GlobalRotationInvariant),
            other => Err(Error::InvalidConfig(format!("unknown scattering variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringConfig {
    pub bank: FilterBankConfig,
    pub max_order: usize,
    pub variant: Variant,
}

impl ScatteringConfig {
    pub fn new(bank: FilterBankConfig, max_order: usize, variant: Variant) -> Self {
        ScatteringConfig {
            bank,
            max_order,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        if self.max_order > MAX_ORDER {
            return Err(Error::InvalidConfig(format!(
                "max order {} exceeds {MAX_ORDER}",
                self.max_order
            )));
        }
        Ok(())
    }

    pub fn paths(&self) -> Vec<Path> {
        enumerate_paths(
            self.bank.num_scales,
            self.bank.num_angles,
            self.max_order,
            self.variant.is_rotation_invariant(),
        )
    }

    /// Output cells per side: `N / 2^J` for the windowed variant, 1 otherwise.
    pub fn cells_per_side(&self) -> usize {
        match self.variant {
            Variant::Windowed => self.bank.image_size >> self.bank.num_scales,
            _ => 1,
        }
    }

    /// SHA-256 over every parameter that changes the feature values.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = format!(
            "bscf-scattering;N={};J={};L={};M={};variant={};sigma0={:e};xi0={:e}",
            self.bank.image_size,
            self.bank.num_scales,
            self.bank.num_angles,
            self.max_order,
            self.variant.as_str(),
            self.bank.sigma0,
            self.bank.xi0
        );
        Sha256::digest(canonical.as_bytes()).into()
    }
}

/// `D = C * (1 + paths) * cells`, the leading one being the order-0 term.
pub fn count_features(cfg: &ScatteringConfig, channels: usize) -> Result<usize> {
    cfg.validate()?;
    let cells = cfg.cells_per_side();
    Ok(channels * (1 + cfg.paths().len()) * cells * cells)
}

/// Maps flat feature indices back to `(channel, path, cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    channels: usize,
    paths: Vec<Path>,
    cells_per_side: usize,
    windowed: bool,
}

/// One output coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureEntry<'a> {
    pub channel: usize,
    pub path: &'a Path,
    /// `(row, col)` output cell for windowed features.
    pub cell: Option<(usize, usize)>,
}

impl FeatureLayout {
    pub fn new(cfg: &ScatteringConfig, channels: usize) -> Self {
        let mut paths = vec![Path::order_zero()];
        paths.extend(cfg.paths());
        FeatureLayout {
            channels,
            paths,
            cells_per_side: cfg.cells_per_side(),
            windowed: cfg.variant == Variant::Windowed,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.per_channel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Paths including the leading order-0 path.
    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    fn cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    fn per_channel(&self) -> usize {
        self.paths.len() * self.cells()
    }

    pub fn entry(&self, index: usize) -> FeatureEntry<'_> {
        let channel = index / self.per_channel();
        let rest = index % self.per_channel();
        let path = &self.paths[rest / self.cells()];
        let cell_index = rest % self.cells();
        let cell = self
            .windowed
            .then(|| (cell_index / self.cells_per_side, cell_index % self.cells_per_side));
        FeatureEntry { channel, path, cell }
    }

    /// Indices of all coefficients of a given order.
    pub fn indices_of_order(&self, order: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.entry(i).path.order() == order).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Arc<FeatureLayout>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.layout.channels()
    }
}

/// Reusable scattering operator: a filter bank, an FFT plan, and layouts.
#[derive(Debug, Clone)]
pub struct Scatterer {
    cfg: ScatteringConfig,
    bank: Arc<FilterBank>,
    fft: Fft2d,
}

impl Scatterer {
    pub fn new(cfg: ScatteringConfig) -> Result<Self> {
        cfg.validate()?;
        let bank = FilterBank::build(cfg.bank)?;
        Self::with_bank(Arc::new(bank), cfg)
    }

    pub fn with_bank(bank: Arc<FilterBank>, cfg: ScatteringConfig) -> Result<Self> {
        cfg.validate()?;
        if *bank.config() != cfg.bank {
            return Err(Error::InvalidConfig(
                "filter bank was built for a different configuration".into(),
            ));
        }
        let fft = Fft2d::new(cfg.bank.image_size);
        Ok(Scatterer { cfg, bank, fft })
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn layout(&self, channels: usize) -> FeatureLayout {
        FeatureLayout::new(&self.cfg, channels)
    }

    pub fn scatter(&self, image: &Image) -> Result<FeatureVector> {
        let layout = Arc::new(self.layout(image.channels()));
        self.scatter_with_layout(image, layout)
    }

    fn scatter_with_layout(&self, image: &Image, layout: Arc<FeatureLayout>) -> Result<FeatureVector> {
        let n = self.cfg.bank.image_size;
        if image.size() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: image.size(),
            });
        }
        if !image.is_finite() {
            return Err(Error::NonFiniteInput("image contains NaN or infinity".into()));
        }
        let mut values = Vec::with_capacity(layout.len());
        for c in 0..image.channels() {
            self.scatter_channel(image.channel(c), &mut values);
        }
        debug_assert_eq!(values.len(), layout.len());
        Ok(FeatureVector { values, layout })
    }

    pub fn scatter_batch(&self, images: &[Image]) -> Result<Vec<FeatureVector>> {
        let mut layouts: Vec<(usize, Arc<FeatureLayout>)> = Vec::new();
        let mut per_image = Vec::with_capacity(images.len());
        for img in images {
            let layout = match layouts.iter().find(|(c, _)| *c == img.channels()) {
                Some((_, l)) => Arc::clone(l),
                None => {
                    let l = Arc::new(self.layout(img.channels()));
                    layouts.push((img.channels(), Arc::clone(&l)));
                    l
                }
            };
            per_image.push(layout);
        }
        images
            .par_iter()
            .zip(per_image)
            .enumerate()
            .map(|(i, (img, layout))| self.scatter_with_layout(img, layout).map_err(|e| Error::at_index(i, e)))
            .collect()
    }

    fn scatter_channel(&self, signal: &[f64], out: &mut Vec<f64>) {
        let cfg = &self.cfg;
        let num_j = cfg.bank.num_scales;
        let num_l = cfg.bank.num_angles;
        let rotinv = cfg.variant.is_rotation_invariant();
        let signal_hat = self.fft.forward_real(signal);

        // order 0
        match cfg.variant {
            Variant::Windowed => out.extend(self.lowpass_subsample(&signal_hat)),
            _ => out.push(signal.iter().sum::<f64>() / signal.len() as f64),
        }
        if cfg.max_order == 0 {
            return;
        }

        let cells = cfg.cells_per_side().pow(2);
        let order1_len = if rotinv { num_j } else { num_j * num_l } * cells;
        let pairs = num_j * num_j.saturating_sub(1) / 2;
        let order2_len = if cfg.max_order >= 2 {
            if rotinv { pairs } else { pairs * num_l * num_l }
        } else {
            0
        } * cells;
        let mut order1 = vec![0.0; order1_len];
        let mut order2 = vec![0.0; order2_len];

        let mut buf = vec![Complex64::new(0.0, 0.0); signal_hat.len()];
        for j1 in 0..num_j {
            for l1 in 0..num_l {
                let u1 = self.modulus_of_filtered(&signal_hat, self.bank.psi(j1, l1), &mut buf);
                let s1 = self.average(&u1);
                let slot = if rotinv { j1 } else { j1 * num_l + l1 };
                accumulate(&mut order1[slot * cells..(slot + 1) * cells], &s1);

                if cfg.max_order < 2 || j1 + 1 >= num_j {
                    continue;
                }
                let u1_hat = self.fft.forward_real(&u1);
                for j2 in (j1 + 1)..num_j {
                    let pair = pair_index(j1, j2, num_j);
                    for l2 in 0..num_l {
                        let u2 = self.modulus_of_filtered(&u1_hat, self.bank.psi(j2, l2), &mut buf);
                        let s2 = self.average(&u2);
                        let slot = if rotinv {
                            pair
                        } else {
                            (pair * num_l + l1) * num_l + l2
                        };
                        accumulate(&mut order2[slot * cells..(slot + 1) * cells], &s2);
                    }
                }
            }
        }
        if rotinv {
            let l = num_l as f64;
            order1.iter_mut().for_each(|v| *v /= l);
            order2.iter_mut().for_each(|v| *v /= l * l);
        }
        out.extend(order1.into_iter().map(|v| v.max(0.0)));
        out.extend(order2.into_iter().map(|v| v.max(0.0)));
    }

    /// `|ifft(x_hat * filter)|` as a real map.
    fn modulus_of_filtered(&self, x_hat: &[Complex64], filter: &[f64], buf: &mut [Complex64]) -> Vec<f64> {
        for ((b, x), f) in buf.iter_mut().zip(x_hat).zip(filter) {
            *b = x * f;
        }
        self.fft.inverse(buf);
        buf.iter().map(|v| v.norm()).collect()
    }

    fn average(&self, map: &[f64]) -> Vec<f64> {
        match self.cfg.variant {
            Variant::Windowed => {
                let map_hat = self.fft.forward_real(map);
                self.lowpass_subsample(&map_hat)
            }
            _ => vec![map.iter().sum::<f64>() / map.len() as f64],
        }
    }

    fn lowpass_subsample(&self, x_hat: &[Complex64]) -> Vec<f64> {
        let n = self.cfg.bank.image_size;
        let stride = 1usize << self.cfg.bank.num_scales;
        let mut buf: Vec<Complex64> = x_hat.iter().zip(self.bank.phi()).map(|(x, p)| x * p).collect();
        self.fft.inverse(&mut buf);
        let mut out = Vec::with_capacity((n / stride).pow(2));
        for r in (0..n).step_by(stride) {
            for k in (0..n).step_by(stride) {
                out.push(buf[r * n + k].re);
            }
        }
        out
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Lexicographic index of the pair `j1 < j2` among all pairs from `0..num_j`.
fn pair_index(j1: usize, j2: usize, num_j: usize) -> usize {
    // pairs starting with a < j1: sum_{a<j1} (num_j - 1 - a)
    j1 * (2 * num_j - j1 - 1) / 2 + (j2 - j1 - 1)
}

/// Scattering coefficients of one image.
pub fn scatter(image: &Image, bank: &FilterBank, cfg: &ScatteringConfig) -> Result<FeatureVector> {
    Scatterer::with_bank(Arc::new(bank.clone()), *cfg)?.scatter(image)
}

/// Elementwise identical to mapping [`scatter`]; errors carry the index of
/// the offending image.
pub fn scatter_batch(images: &[Image], bank: &FilterBank, cfg: &ScatteringConfig) -> Result<Vec<FeatureVector>> {
    Scatterer::with_bank(Arc::new(bank.clone()), *cfg)?.scatter_batch(images)
}
