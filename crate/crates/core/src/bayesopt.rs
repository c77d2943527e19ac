//! Pool-based Bayesian optimization with expected improvement.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gp::{GPState, OptimizerConfig, PredictiveDistribution};
use crate::kernels::{KernelChoice, KernelFamily};
use crate::seeds::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Minimize => a < b,
            Direction::Maximize => a > b,
        }
    }

    fn improvement(self, mean: f64, best: f64) -> f64 {
        match self {
            Direction::Minimize => best - mean,
            Direction::Maximize => mean - best,
        }
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" | "minimize" => Ok(Direction::Minimize),
            "max" | "maximize" => Ok(Direction::Maximize),
            _ => Err(Error::InvalidConfig(format!("unknown direction '{s}'"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Minimize => "minimize",
            Direction::Maximize => "maximize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BOConfig {
    pub n_init: usize,
    pub n_iters: usize,
    pub pool_size: usize,
    pub direction: Direction,
    pub kernel: KernelChoice,
    /// Re-optimize hyperparameters every this many iterations; in between
    /// the previous hyperparameters are reused.
    pub refit_every: usize,
    pub seed: u64,
    pub gp: OptimizerConfig,
}

impl Default for BOConfig {
    fn default() -> Self {
        BOConfig {
            n_init: 50,
            n_iters: 50,
            pool_size: 1000,
            direction: Direction::Minimize,
            kernel: KernelChoice::new(KernelFamily::Matern52, false),
            refit_every: 1,
            seed: 0,
            gp: OptimizerConfig::default(),
        }
    }
}

impl BOConfig {
    pub fn validate(&self, available: usize) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("n_init must be at least 1".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidConfig("refit_every must be at least 1".into()));
        }
        if self.pool_size > available {
            return Err(Error::InvalidConfig(format!(
                "pool size {} exceeds the {available} available candidates",
                self.pool_size
            )));
        }
        if self.n_init + self.n_iters > self.pool_size {
            return Err(Error::PoolExhausted { queried: self.n_init + self.n_iters });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 0 for the initial design, then 1..=n_iters.
    pub iteration: usize,
    /// Row of the candidate matrix that was queried.
    pub index: usize,
    pub value: f64,
    pub best: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BOTrace {
    pub records: Vec<TraceRecord>,
    pub pool_optimum: f64,
    /// Standard deviation of the oracle over the pool; divides regret into
    /// standardized units.
    pub pool_std: f64,
    pub direction: Direction,
    pub n_init: usize,
}

impl BOTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.regret)
    }

    /// Regret once the initial design has been evaluated.
    pub fn initial_regret(&self) -> f64 {
        self.records
            .get(self.n_init.saturating_sub(1))
            .map_or(f64::NAN, |r| r.regret)
    }

    /// Final regret as a fraction of the post-initialization regret
    /// (0 when initialization already found the optimum).
    pub fn normalized_final_regret(&self) -> f64 {
        let init = self.initial_regret();
        if init == 0.0 {
            0.0
        } else {
            self.final_regret() / init
        }
    }

    pub fn standardized_regret(&self) -> Vec<f64> {
        let s = if self.pool_std > 0.0 { self.pool_std } else { 1.0 };
        self.records.iter().map(|r| r.regret / s).collect()
    }

    /// Best-so-far and regret monotone, no repeated queries.
    pub fn check_invariants(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.records.iter().all(|r| seen.insert(r.index) && r.regret >= 0.0)
            && self.records.windows(2).all(|w| {
                !self.direction.better(w[0].best, w[1].best) && w[1].regret <= w[0].regret
            })
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Format { path: "<trace>".into(), message: e.to_string() };
        wtr.write_record(["iteration", "index", "value", "best", "regret"]).map_err(csv_err)?;
        for r in &self.records {
            wtr.write_record([
                r.iteration.to_string(),
                r.index.to_string(),
                r.value.to_string(),
                r.best.to_string(),
                r.regret.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| e.context(format!("writing {}", path.display())))
    }
}

/// `sigma * (z Phi(z) + phi(z))` with `z = improvement / sigma`, and the
/// plain positive part of the improvement when `sigma = 0`.
pub fn expected_improvement(pred: &PredictiveDistribution, best: f64, direction: Direction) -> Vec<f64> {
    pred.mean
        .iter()
        .zip(&pred.variance)
        .map(|(&m, &v)| ei_scalar(direction.improvement(m, best), v.max(0.0).sqrt()))
        .collect()
}

fn ei_scalar(improvement: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return improvement.max(0.0);
    }
    let n = Normal::standard();
    let z = improvement / sigma;
    (sigma * (z * n.cdf(z) + n.pdf(z))).max(0.0)
}

/// Candidate rows taking part in the run, ascending.
fn pool_indices(available: usize, cfg: &BOConfig) -> Vec<usize> {
    if cfg.pool_size == available {
        return (0..available).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, "bo/pool"));
    let mut idx = index::sample(&mut rng, available, cfg.pool_size).into_vec();
    idx.sort_unstable();
    idx
}

struct Tracker<'a, F> {
    oracle: &'a F,
    direction: Direction,
    optimum: f64,
    best: Option<f64>,
    records: Vec<TraceRecord>,
}

impl<F: Fn(usize) -> f64> Tracker<'_, F> {
    fn query(&mut self, iteration: usize, index: usize) -> f64 {
        let value = (self.oracle)(index);
        let best = match self.best {
            Some(b) if !self.direction.better(value, b) => b,
            _ => value,
        };
        self.best = Some(best);
        self.records.push(TraceRecord {
            iteration,
            index,
            value,
            best,
            regret: (self.optimum - best).abs(),
        });
        value
    }
}

fn pool_stats<F: Fn(usize) -> f64>(pool: &[usize], oracle: &F, direction: Direction) -> (f64, f64) {
    let values: Vec<f64> = pool.iter().map(|&i| oracle(i)).collect();
    let optimum = values
        .iter()
        .copied()
        .reduce(|a, b| if direction.better(b, a) { b } else { a })
        .unwrap_or(f64::NAN);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (optimum, std)
}

fn initial_design(pool: &[usize], cfg: &BOConfig) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, "bo/init"));
    index::sample(&mut rng, pool.len(), cfg.n_init)
        .into_iter()
        .map(|k| pool[k])
        .collect()
}

/// Expected-improvement search over rows of `pool_features`; `oracle(i)`
/// returns the objective for row `i`.
pub fn run_bo<F: Fn(usize) -> f64>(pool_features: &DMatrix<f64>, oracle: F, cfg: &BOConfig) -> Result<BOTrace> {
    let available = pool_features.nrows();
    cfg.validate(available)?;
    let pool = pool_indices(available, cfg);
    let (optimum, pool_std) = pool_stats(&pool, &oracle, cfg.direction);
    let mut t = Tracker { oracle: &oracle, direction: cfg.direction, optimum, best: None, records: Vec::new() };

    let mut observed = vec![false; available];
    let mut obs_idx = Vec::new();
    let mut obs_y = Vec::new();
    for i in initial_design(&pool, cfg) {
        obs_y.push(t.query(0, i));
        observed[i] = true;
        obs_idx.push(i);
    }

    let pool_x = DMatrix::from_fn(pool.len(), pool_features.ncols(), |r, c| pool_features[(pool[r], c)]);
    let mut previous: Option<GPState> = None;
    for it in 1..=cfg.n_iters {
        let x = DMatrix::from_fn(obs_idx.len(), pool_features.ncols(), |r, c| pool_features[(obs_idx[r], c)]);
        let mut opt = cfg.gp.clone();
        opt.seed = substream(cfg.seed, &format!("bo/gp/{it}"));
        let refit = previous.is_none() || (it - 1) % cfg.refit_every == 0;
        let gp = match (&previous, refit) {
            (Some(prev), false) => {
                let frozen = OptimizerConfig { iters: 0, ..opt };
                GPState::fit_from(&x, &obs_y, prev.spec.clone(), prev.noise_variance(), &frozen)
            }
            _ => GPState::fit(&x, &obs_y, cfg.kernel, &opt),
        }
        .map_err(|e| e.context(format!("BO iteration {it}")))?;
        let pred = gp.predict(&pool_x)?;
        let best = t.best.expect("initial design is nonempty");
        let ei = expected_improvement(&pred, best, cfg.direction);
        let mut choice: Option<(usize, f64)> = None;
        for (k, &i) in pool.iter().enumerate() {
            if observed[i] {
                continue;
            }
            if choice.is_none_or(|(_, e)| ei[k] > e) {
                choice = Some((i, ei[k]));
            }
        }
        let (next, _) = choice.ok_or(Error::PoolExhausted { queried: obs_idx.len() })?;
        obs_y.push(t.query(it, next));
        observed[next] = true;
        obs_idx.push(next);
        previous = Some(gp);
    }
    Ok(BOTrace { records: t.records, pool_optimum: optimum, pool_std, direction: cfg.direction, n_init: cfg.n_init })
}

/// Uniform sampling without replacement with the same budget and trace
/// layout as [`run_bo`].
pub fn random_search<F: Fn(usize) -> f64>(available: usize, oracle: F, cfg: &BOConfig) -> Result<BOTrace> {
    cfg.validate(available)?;
    let pool = pool_indices(available, cfg);
    let (optimum, pool_std) = pool_stats(&pool, &oracle, cfg.direction);
    let mut t = Tracker { oracle: &oracle, direction: cfg.direction, optimum, best: None, records: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, "rs/order"));
    let order = index::sample(&mut rng, pool.len(), cfg.n_init + cfg.n_iters).into_vec();
    for (k, &p) in order.iter().enumerate() {
        let iteration = if k < cfg.n_init { 0 } else { k + 1 - cfg.n_init };
        t.query(iteration, pool[p]);
    }
    Ok(BOTrace { records: t.records, pool_optimum: optimum, pool_std, direction: cfg.direction, n_init: cfg.n_init })
}

/// Mean and normal-approximation 95% interval of several regret curves of
/// equal length, one row per trace position.
pub fn regret_band(curves: &[Vec<f64>]) -> Result<Vec<(f64, f64, f64)>> {
    let len = curves.first().map_or(0, Vec::len);
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::LengthMismatch { left: len, right: curves.iter().map(Vec::len).max().unwrap_or(0) });
    }
    let k = curves.len() as f64;
    Ok((0..len)
        .map(|i| {
            let vals: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            let mean = vals.iter().sum::<f64>() / k;
            let half = if curves.len() < 2 {
                0.0
            } else {
                let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
                1.96 * sd / k.sqrt()
            };
            (mean, mean - half, mean + half)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::TargetStats;

    fn pred(mean: Vec<f64>, var: Vec<f64>) -> PredictiveDistribution {
        PredictiveDistribution::from_standardized(mean, var, TargetStats::identity())
    }

    #[test]
    fn ei_closed_forms() {
        let ei = expected_improvement(&pred(vec![1.0, 1.0, 0.5], vec![0.0, 1.0, 0.0]), 1.0, Direction::Minimize);
        assert_eq!(ei[0], 0.0);
        assert!((ei[1] - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(ei[2], 0.5);
        let e: Vec<f64> = [0.1f64, 1.0, 10.0]
            .iter()
            .map(|s| expected_improvement(&pred(vec![0.0], vec![s * s]), 0.0, Direction::Minimize)[0])
            .collect();
        assert!(e[0] < e[1] && e[1] < e[2]);
        let up = expected_improvement(&pred(vec![2.0], vec![0.0]), 1.0, Direction::Maximize);
        assert_eq!(up[0], 1.0);
    }

    fn features(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |i, j| ((i * (7 + 3 * j)) % 23) as f64 / 23.0 + 0.01 * i as f64)
    }

    fn small_cfg() -> BOConfig {
        BOConfig {
            n_init: 5,
            n_iters: 6,
            pool_size: 40,
            gp: OptimizerConfig { iters: 20, ..Default::default() },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn constant_oracle_has_no_regret() {
        let x = features(40);
        let tr = run_bo(&x, |_| 2.0, &small_cfg()).unwrap();
        assert!(tr.records.iter().all(|r| r.regret == 0.0));
        assert_eq!(tr.records.len(), 11);
        assert!(tr.check_invariants());
    }

    #[test]
    fn bo_is_deterministic_and_well_formed() {
        let x = features(60);
        let f = |i: usize| (x[(i, 0)] - 0.3).powi(2) + (x[(i, 1)] - 0.6).powi(2);
        let cfg = BOConfig { pool_size: 50, ..small_cfg() };
        let a = run_bo(&x, f, &cfg).unwrap();
        let b = run_bo(&x, f, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.check_invariants());
        assert_eq!(a.records.iter().filter(|r| r.iteration == 0).count(), 5);
        assert_eq!(a.records.last().unwrap().iteration, 6);
    }

    #[test]
    fn exhaustive_random_search_finds_optimum() {
        let f = |i: usize| ((i * 37) % 101) as f64;
        let cfg = BOConfig { n_init: 10, n_iters: 30, pool_size: 40, ..small_cfg() };
        let tr = random_search(40, f, &cfg).unwrap();
        assert_eq!(tr.final_regret(), 0.0);
        assert!(tr.check_invariants());
        assert_eq!(tr, random_search(40, f, &cfg).unwrap());
    }

    #[test]
    fn budget_checks() {
        let cfg = BOConfig { n_init: 30, n_iters: 20, pool_size: 40, ..small_cfg() };
        assert!(matches!(random_search(40, |_| 0.0, &cfg), Err(Error::PoolExhausted { .. })));
        let cfg = BOConfig { pool_size: 50, ..small_cfg() };
        assert!(matches!(random_search(40, |_| 0.0, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn csv_layout() {
        let tr = random_search(40, |i| i as f64, &small_cfg()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,index,value,best,regret");
        assert_eq!(lines.count(), 11);
    }

    #[test]
    fn band_of_identical_curves_is_degenerate() {
        let b = regret_band(&[vec![3.0, 1.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(b, vec![(3.0, 3.0, 3.0), (1.0, 1.0, 1.0)]);
        assert!(regret_band(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
