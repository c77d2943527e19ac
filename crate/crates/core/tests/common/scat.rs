//! Measurements behind the scattering property tests. Each returns the
//! observed quantity so callers can assert or report it.

use std::collections::BTreeSet;

use bayes_scatter::filterbank::{FilterBank, FilterBankConfig};
use bayes_scatter::image::Image;
use bayes_scatter::scattering::{count_features, enumerate_paths, ScatteringConfig, Scatterer, Variant};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fourier_modulus, l2_diff, rel_diff, rng, white_noise_image, Blobs, Scene, Texture};

pub const N: usize = 32;
pub const DEFORM_T: [f64; 3] = [0.5, 0.25, 0.125];
/// Peak displacement of the deformation field at `t = 1`, in pixels.
pub const DEFORM_AMP: f64 = 1.0;

pub fn scatterer(n: usize, j: usize, l: usize, variant: Variant) -> Scatterer {
    Scatterer::new(ScatteringConfig::new(FilterBankConfig::new(n, j, l), 2, variant)).unwrap()
}

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Checks path enumeration against nested-loop enumeration and the
/// closed-form counts for every `J <= 6`, `L in {4, 8}`, `M <= 2`. Returns a
/// description of each disagreement.
pub fn path_count_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    let n = 64;
    for j in 1..=6usize {
        for l in [4usize, 8] {
            for m in 0..=2usize {
                for rotinv in [false, true] {
                    // brute force: every (scale, angle) tuple, keep increasing scales
                    let r = if rotinv { 1 } else { l };
                    let mut oracle = BTreeSet::new();
                    for j1 in 0..j {
                        for l1 in 0..r {
                            if m >= 1 {
                                oracle.insert((vec![j1], vec![l1]));
                            }
                            for j2 in 0..j {
                                for l2 in 0..r {
                                    if m >= 2 && j1 < j2 {
                                        oracle.insert((vec![j1, j2], vec![l1, l2]));
                                    }
                                }
                            }
                        }
                    }
                    let got: Vec<_> = enumerate_paths(j, l, m, rotinv)
                        .iter()
                        .map(|p| (p.scales().to_vec(), p.angles().map_or(vec![0; p.order()], <[usize]>::to_vec)))
                        .collect();
                    let got_set: BTreeSet<_> = got.iter().cloned().collect();
                    if got_set.len() != got.len() || got_set != oracle {
                        bad.push(format!("paths J={j} L={l} M={m} rotinv={rotinv}"));
                    }
                    let closed: usize = (1..=m).map(|k| r.pow(k as u32) * binom(j, k)).sum();
                    if got.len() != closed {
                        bad.push(format!("closed form J={j} L={l} M={m} rotinv={rotinv}: {} vs {closed}", got.len()));
                    }
                    let variants: &[Variant] =
                        if rotinv { &[Variant::GlobalRotationInvariant] } else { &[Variant::Global, Variant::Windowed] };
                    for &v in variants {
                        let cfg = ScatteringConfig::new(FilterBankConfig::new(n, j, l), m, v);
                        let cells = if v == Variant::Windowed { n * n / (1 << (2 * j)) } else { 1 };
                        for c in [1usize, 3] {
                            let want = c * (1 + closed) * cells;
                            match count_features(&cfg, c) {
                                Ok(d) if d == want => {}
                                other => bad.push(format!("count {v} J={j} L={l} M={m} C={c}: {other:?} vs {want}")),
                            }
                        }
                    }
                }
            }
        }
    }
    bad
}

/// Largest relative change of global features under random circular shifts.
pub fn shift_invariance(trials: usize, seed: u64) -> f64 {
    let s = scatterer(N, 4, 8, Variant::Global);
    let mut r = rng(seed);
    (0..trials)
        .map(|_| {
            let f = white_noise_image(&mut r, 1, N, 1.0);
            let (dr, dk) = (r.random_range(1..N as i64) as isize, r.random_range(1..N as i64) as isize);
            rel_diff(&s.scatter(&f.shift_circular(dr, dk)).unwrap().values, &s.scatter(&f).unwrap().values)
        })
        .fold(0.0, f64::max)
}

/// Largest relative change of rotation-invariant features under 90-degree
/// turns.
pub fn quarter_turn_invariance(trials: usize, seed: u64) -> f64 {
    let s = scatterer(N, 4, 8, Variant::GlobalRotationInvariant);
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let f = white_noise_image(&mut r, 1, N, 1.0);
        let base = s.scatter(&f).unwrap().values;
        for q in 1..4 {
            worst = worst.max(rel_diff(&s.scatter(&f.rotate90(q)).unwrap().values, &base));
        }
    }
    worst
}

/// Largest `|S[p] c| / |c|` over order >= 1 paths for constant images, all
/// variants.
pub fn constant_nullity() -> f64 {
    let mut worst: f64 = 0.0;
    for v in [Variant::Global, Variant::Windowed, Variant::GlobalRotationInvariant] {
        let s = scatterer(N, 4, 8, v);
        for c in [1.0, -3.5, 250.0] {
            let fv = s.scatter(&Image::from_fn(1, N, |_, _, _| c)).unwrap();
            for i in 0..fv.len() {
                if fv.layout.entry(i).path.order() >= 1 {
                    worst = worst.max(fv.values[i].abs() / c.abs());
                }
            }
        }
    }
    worst
}

/// Worst `||Phi(f + e) - Phi(f)|| / (K ||e||)` with `K = sqrt(lp_max)`; the
/// bound holds when this is at most 1. Image norms are RMS; windowed
/// outputs are functions on the cell grid, so their norm is the RMS over
/// cells as well.
pub fn noise_stability(trials: usize, seed: u64) -> (f64, f64) {
    let bank = FilterBank::build(FilterBankConfig::new(N, 4, 8)).unwrap();
    let k = bank.lp_max().sqrt();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..trials {
        let variant = [Variant::Global, Variant::Windowed][i % 2];
        let s = scatterer(N, 4, 8, variant);
        let f = if i % 4 < 2 { Blobs::random(&mut r, N).render(N) } else { white_noise_image(&mut r, 1, N, 1.0) };
        let sigma = [0.01, 0.1, 1.0][i % 3];
        let e = Image::from_fn(1, N, |_, _, _| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r));
        let cells = s.config().cells_per_side() as f64;
        let lhs = l2_diff(&s.scatter(&f.add(&e).unwrap()).unwrap().values, &s.scatter(&f).unwrap().values) / cells;
        worst = worst.max(lhs / (k * e.rms_norm()));
    }
    (worst, k)
}

/// Deformation numerators `||Phi(D_t f) - Phi(f)||` for each `t`.
pub fn deformation_numerators(phi: &dyn Fn(&Image) -> Vec<f64>, scene: &dyn Scene) -> Vec<f64> {
    let base = phi(&scene.render(N));
    DEFORM_T.iter().map(|&t| l2_diff(&phi(&scene.render_deformed(N, t, DEFORM_AMP)), &base)).collect()
}

pub struct DeformationStats {
    /// Worst `num(t/2) / num(t)`; halving holds within 30% slack when
    /// this is at most 0.65.
    pub worst_halving: f64,
    /// Worst `ratio(t) / ratio(t_max)` where `ratio = num / (||f|| t)`:
    /// no blow-up as `t` shrinks.
    pub worst_growth: f64,
    pub max_ratio: f64,
}

pub fn deformation_stability(images: usize, seed: u64) -> DeformationStats {
    let s = scatterer(N, 4, 8, Variant::Global);
    let phi = |im: &Image| s.scatter(im).unwrap().values;
    let mut r = rng(seed);
    let mut stats = DeformationStats { worst_halving: 0.0, worst_growth: 0.0, max_ratio: 0.0 };
    for _ in 0..images {
        let scene = Blobs::random(&mut r, N);
        let norm = scene.render(N).rms_norm();
        let num = deformation_numerators(&phi, &scene);
        let ratio: Vec<f64> = num.iter().zip(DEFORM_T).map(|(n, t)| n / (norm * t)).collect();
        for w in num.windows(2) {
            stats.worst_halving = stats.worst_halving.max(w[1] / w[0]);
        }
        for &q in &ratio {
            stats.worst_growth = stats.worst_growth.max(q / ratio[0]);
            stats.max_ratio = stats.max_ratio.max(q);
        }
    }
    stats
}

pub fn finest_texture(r: &mut impl Rng) -> Texture {
    let bank = FilterBankConfig::new(N, 4, 8);
    Texture {
        omega: bank.wavelet_xi(0),
        theta: r.random_range(0.0..std::f64::consts::PI),
        width: r.random_range(6.0..9.0),
        centre: N as f64 / 2.0,
    }
}

/// Per texture and `t`: Fourier-modulus deformation numerator divided by the
/// scattering one. Returns the smallest factor at the finest deformation and
/// the smallest over all `t`.
pub fn fourier_contrast(textures: usize, seed: u64) -> (f64, f64) {
    let s = scatterer(N, 4, 8, Variant::Global);
    let phi = |im: &Image| s.scatter(im).unwrap().values;
    let mut r = rng(seed);
    let (mut finest, mut overall) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..textures {
        let tex = finest_texture(&mut r);
        let ns = deformation_numerators(&phi, &tex);
        let nf = deformation_numerators(&fourier_modulus, &tex);
        for (i, (a, b)) in nf.iter().zip(&ns).enumerate() {
            let factor = a / b;
            overall = overall.min(factor);
            if i == DEFORM_T.len() - 1 {
                finest = finest.min(factor);
            }
        }
    }
    (finest, overall)
}

/// Per image: mean |order-2| and mean |order-1| coefficient.
pub fn energy_by_order(images: usize, seed: u64) -> Vec<(f64, f64)> {
    let s = scatterer(N, 4, 8, Variant::Global);
    let mut r = rng(seed);
    (0..images)
        .map(|_| {
            let fv = s.scatter(&Blobs::random(&mut r, N).render(N)).unwrap();
            let mean = |order| {
                let idx = fv.layout.indices_of_order(order);
                idx.iter().map(|&i| fv.values[i].abs()).sum::<f64>() / idx.len() as f64
            };
            (mean(2), mean(1))
        })
        .collect()
}

/// Per image, the worst relative change of windowed features
/// (J = log2 N - 1) over shifts of at most two pixels; sorted ascending.
pub fn windowed_local_stability(images: usize, seed: u64) -> Vec<f64> {
    let s = scatterer(N, 4, 8, Variant::Windowed);
    let mut r = rng(seed);
    let mut out: Vec<f64> = (0..images)
        .map(|_| {
            let f = Blobs::random(&mut r, N).render(N);
            let base = s.scatter(&f).unwrap().values;
            [(1, 0), (0, 2), (1, 1), (-2, 0), (-1, 1), (0, -1), (2, 0)]
                .iter()
                .map(|&(dr, dk)| rel_diff(&s.scatter(&f.shift_circular(dr, dk)).unwrap().values, &base))
                .fold(0.0, f64::max)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}
