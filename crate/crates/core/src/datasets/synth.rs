//! Synthetic regression tasks with controllable covariate shift.
//!
//! * `blob_count`: Gaussian blobs on a sinusoidal background; the target is
//!   the number of pixels above 0.5, computed from the rendered image.
//! * `charge_energy`: point charges rendered as two smoothed densities plus a
//!   near-delta channel; the target is the pairwise Coulomb energy.
//!
//! Each sample is generated from its own seeded stream, so generation order
//! and parallelism do not change the output. The charge task emulates a
//! molecular-energy setup; it makes no claim of physical fidelity.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seeds::substream;

/// Pixels strictly above this value count towards the blob target.
pub const BLOB_THRESHOLD: f64 = 0.5;
/// Charges are never placed closer than this (pixels).
pub const MIN_CHARGE_SEPARATION: f64 = 1.5;
/// Smoothing widths (pixels) of the two density channels.
pub const DENSITY_WIDTHS: [f64; 2] = [2.0, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BlobCount,
    ChargeEnergy,
}

impl Task {
    pub fn channels(self) -> usize {
        match self {
            Task::BlobCount => 1,
            Task::ChargeEnergy => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::BlobCount => "blob_count",
            Task::ChargeEnergy => "charge_energy",
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blob_count" => Ok(Task::BlobCount),
            "charge_energy" => Ok(Task::ChargeEnergy),
            _ => Err(Error::InvalidConfig(format!("unknown task '{s}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split '{s}'"))),
        }
    }
}

/// Input-distribution knobs for one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    /// Blob peak amplitude range, or charge magnitude range.
    pub intensity: (f64, f64),
    /// Background sinusoid amplitude (blob task).
    pub texture_amplitude: f64,
    /// Charges are placed within this fraction of the image size from the
    /// centre (charge task).
    pub placement_radius: f64,
}

impl Default for ShiftParams {
    fn default() -> Self {
        ShiftParams {
            intensity: (0.6, 1.0),
            texture_amplitude: 0.1,
            placement_radius: 0.3,
        }
    }
}

impl ShiftParams {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.intensity;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("intensity range ({lo}, {hi})")));
        }
        if !(0.0..BLOB_THRESHOLD).contains(&self.texture_amplitude) {
            return Err(Error::InvalidConfig(format!(
                "texture amplitude {} must lie in [0, {BLOB_THRESHOLD})",
                self.texture_amplitude
            )));
        }
        if !(self.placement_radius > 0.0 && self.placement_radius <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "placement radius {} must lie in (0, 0.5]",
                self.placement_radius
            )));
        }
        Ok(())
    }
}

/// Named train/test shift combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftPreset {
    None,
    Intensity,
    Texture,
    Both,
}

impl FromStr for ShiftPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ShiftPreset::None),
            "intensity" => Ok(ShiftPreset::Intensity),
            "texture" => Ok(ShiftPreset::Texture),
            "both" => Ok(ShiftPreset::Both),
            _ => Err(Error::InvalidConfig(format!("unknown shift preset '{s}'"))),
        }
    }
}

impl ShiftPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftPreset::None => "none",
            ShiftPreset::Intensity => "intensity",
            ShiftPreset::Texture => "texture",
            ShiftPreset::Both => "both",
        }
    }

    /// `(train, test)` parameters. Training data always uses the defaults;
    /// "intensity" brightens test blobs (larger charges), "texture" strengthens
    /// the test background (spreads test charges further out).
    pub fn params(self) -> (ShiftParams, ShiftParams) {
        let train = ShiftParams::default();
        let mut test = train;
        if matches!(self, ShiftPreset::Intensity | ShiftPreset::Both) {
            test.intensity = (0.8, 1.4);
        }
        if matches!(self, ShiftPreset::Texture | ShiftPreset::Both) {
            test.texture_amplitude = 0.3;
            test.placement_radius = 0.42;
        }
        (train, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: Task,
    pub image_size: usize,
    pub train: ShiftParams,
    pub test: ShiftParams,
    pub seed: u64,
    /// Fixes the number of blobs (or charges) instead of drawing it.
    pub forced_count: Option<usize>,
}

impl SynthSpec {
    pub fn new(task: Task, image_size: usize, preset: ShiftPreset, seed: u64) -> Self {
        let (train, test) = preset.params();
        SynthSpec { task, image_size, train, test, seed, forced_count: None }
    }

    pub fn channels(&self) -> usize {
        self.task.channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::InvalidConfig(format!("image size {} is below 8", self.image_size)));
        }
        self.train.validate()?;
        self.test.validate()?;
        if let Some(k) = self.forced_count {
            let ok = match self.task {
                Task::BlobCount => k <= 10,
                Task::ChargeEnergy => (2..=6).contains(&k),
            };
            if !ok {
                return Err(Error::InvalidConfig(format!("forced count {k} out of range for {}", self.task)));
            }
        }
        Ok(())
    }

    fn params(&self, split: Split) -> &ShiftParams {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub target: f64,
}

/// Pixels strictly above [`BLOB_THRESHOLD`] in the first channel.
pub fn blob_count_target(image: &Image) -> f64 {
    image.channel(0).iter().filter(|&&v| v > BLOB_THRESHOLD).count() as f64
}

/// `sum_{i<j} q_i q_j / |r_i - r_j|` for `(row, col, q)` triples.
pub fn coulomb_energy(charges: &[(f64, f64, f64)]) -> f64 {
    let mut e = 0.0;
    for i in 0..charges.len() {
        for j in 0..i {
            let (ri, ci, qi) = charges[i];
            let (rj, cj, qj) = charges[j];
            e += qi * qj / ((ri - rj).hypot(ci - cj));
        }
    }
    e
}

/// Shortest signed difference on a periodic axis of length `n`.
fn wrap(d: f64, n: f64) -> f64 {
    d - n * (d / n).round()
}

fn render_blobs(n: usize, p: &ShiftParams, forced: Option<usize>, rng: &mut ChaCha8Rng) -> Image {
    let nf = n as f64;
    let k = forced.unwrap_or_else(|| rng.random_range(1..=10));
    let (fr, fc) = (rng.random_range(1..=4) as f64, rng.random_range(1..=4) as f64);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            let amp = rng.random_range(p.intensity.0..=p.intensity.1);
            let sigma = rng.random_range(0.06..0.12) * nf;
            (rng.random_range(0.0..nf), rng.random_range(0.0..nf), sigma, amp)
        })
        .collect();
    let tau = std::f64::consts::TAU;
    Image::from_fn(1, n, |_, r, c| {
        let (rf, cf) = (r as f64, c as f64);
        let mut v = p.texture_amplitude * 0.5 * (1.0 + (tau * (fr * rf + fc * cf) / nf + phase).sin());
        for &(br, bc, s, a) in &blobs {
            let (dr, dc) = (wrap(rf - br, nf), wrap(cf - bc, nf));
            v += a * (-(dr * dr + dc * dc) / (2.0 * s * s)).exp();
        }
        v
    })
}

fn place_charges(n: usize, p: &ShiftParams, forced: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, f64)> {
    let nf = n as f64;
    let k = forced.unwrap_or_else(|| rng.random_range(2..=6));
    let centre = (nf - 1.0) / 2.0;
    let radius = p.placement_radius * nf;
    let mut out: Vec<(f64, f64, f64)> = Vec::with_capacity(k);
    while out.len() < k {
        // uniform in the disc by rejection from the square
        let (dr, dc) = (rng.random_range(-radius..radius), rng.random_range(-radius..radius));
        if dr.hypot(dc) > radius {
            continue;
        }
        let (r, c) = (centre + dr, centre + dc);
        if out.iter().any(|&(rr, cc, _)| (r - rr).hypot(c - cc) < MIN_CHARGE_SEPARATION) {
            continue;
        }
        out.push((r, c, rng.random_range(p.intensity.0..=p.intensity.1)));
    }
    out
}

/// Densities of `charges`: two unit-mass Gaussian smoothings and a
/// bilinear splat (the near-delta channel).
pub fn render_charges(n: usize, charges: &[(f64, f64, f64)]) -> Image {
    let mut img = Image::zeros(3, n);
    for (ch, &w) in DENSITY_WIDTHS.iter().enumerate() {
        let norm = 1.0 / (std::f64::consts::TAU * w * w);
        for r in 0..n {
            for c in 0..n {
                let v: f64 = charges
                    .iter()
                    .map(|&(qr, qc, q)| q * norm * (-((r as f64 - qr).powi(2) + (c as f64 - qc).powi(2)) / (2.0 * w * w)).exp())
                    .sum();
                img.set(ch, r, c, v);
            }
        }
    }
    for &(qr, qc, q) in charges {
        let (r0, c0) = (qr.floor(), qc.floor());
        let (fr, fc) = (qr - r0, qc - c0);
        for (dr, wr) in [(0usize, 1.0 - fr), (1, fr)] {
            for (dc, wc) in [(0usize, 1.0 - fc), (1, fc)] {
                let (r, c) = ((r0 as usize + dr) % n, (c0 as usize + dc) % n);
                let v = img.get(2, r, c) + q * wr * wc;
                img.set(2, r, c, v);
            }
        }
    }
    img
}

/// One sample, fully determined by `(spec, split, index)`.
pub fn synth_sample(spec: &SynthSpec, split: Split, index: usize) -> Sample {
    let seed = substream(spec.seed, &format!("synth/{}/{}/{index}", spec.task, split.as_str()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = spec.params(split);
    match spec.task {
        Task::BlobCount => {
            let image = render_blobs(spec.image_size, p, spec.forced_count, &mut rng);
            let target = blob_count_target(&image);
            Sample { image, target }
        }
        Task::ChargeEnergy => {
            let charges = place_charges(spec.image_size, p, spec.forced_count, &mut rng);
            Sample { image: render_charges(spec.image_size, &charges), target: coulomb_energy(&charges) }
        }
    }
}

pub fn synth_generate(spec: &SynthSpec, split: Split, count: usize) -> Result<Vec<Sample>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    Ok((0..count).into_par_iter().map(|i| synth_sample(spec, split, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coulomb_pair() {
        assert_eq!(coulomb_energy(&[(0.0, 0.0, 1.0), (0.0, 2.0, 1.0)]), 0.5);
        assert_eq!(coulomb_energy(&[(1.0, 1.0, 2.0)]), 0.0);
    }

    #[test]
    fn zero_blobs_means_zero_target() {
        let mut spec = SynthSpec::new(Task::BlobCount, 32, ShiftPreset::Both, 1);
        spec.forced_count = Some(0);
        for s in synth_generate(&spec, Split::Test, 20).unwrap() {
            assert_eq!(s.target, 0.0);
        }
    }

    #[test]
    fn targets_follow_the_images() {
        let spec = SynthSpec::new(Task::BlobCount, 32, ShiftPreset::Intensity, 2);
        for split in [Split::Train, Split::Test] {
            for s in synth_generate(&spec, split, 30).unwrap() {
                assert_eq!(s.target, blob_count_target(&s.image));
            }
        }
    }

    #[test]
    fn deterministic_and_order_free() {
        let spec = SynthSpec::new(Task::ChargeEnergy, 16, ShiftPreset::None, 3);
        let a = synth_generate(&spec, Split::Train, 12).unwrap();
        let b = synth_generate(&spec, Split::Train, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[7], synth_sample(&spec, Split::Train, 7));
        assert_eq!(a[0].image.channels(), 3);
        assert!(a.iter().all(|s| s.target > 0.0));
    }

    #[test]
    fn delta_channel_conserves_charge() {
        let charges = [(4.3, 5.6, 1.5), (9.0, 2.25, 0.5)];
        let img = render_charges(16, &charges);
        let total: f64 = img.channel(2).iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::new(Task::BlobCount, 32, ShiftPreset::None, 0);
        spec.train.texture_amplitude = 0.7;
        assert!(synth_generate(&spec, Split::Train, 1).is_err());
        let spec = SynthSpec::new(Task::BlobCount, 32, ShiftPreset::None, 0);
        assert!(synth_generate(&spec, Split::Train, 0).is_err());
        assert!("blobs".parse::<Task>().is_err());
        assert!("sideways".parse::<ShiftPreset>().is_err());
    }
}
