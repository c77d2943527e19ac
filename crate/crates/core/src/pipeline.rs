//! End-to-end experiment: synthetic data, scattering features, GP heads on
//! synchronized splits, aggregated metrics, and optional BO runs.
//!
//! Configuration is a flat `key = value` text file (`#` starts a comment,
//! list values are whitespace-separated). Every random choice derives from
//! the single `seed` through named substreams, and split indices depend on
//! the seed alone, so all methods see the same splits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{random_search, regret_band, run_bo, BOConfig, BOTrace, Direction};
use crate::datasets::{synth_generate, write_cache, write_synthetic, FeatureCache, ShiftPreset, Split, SynthSpec, Task};
use crate::error::{Error, Result};
use crate::filterbank::FilterBankConfig;
use crate::gp::{GPState, OptimizerConfig};
use crate::image::Image;
use crate::kernels::{KernelChoice, KernelFamily};
use crate::metrics::{aggregate, compute_metrics, format_table, trivial_baseline, AggregateReport, MetricsReport};
use crate::model::Preprocess;
use crate::scattering::{Scatterer, ScatteringConfig, Variant};
use crate::seeds::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub task: Task,
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub shift: ShiftPreset,
    pub seed: u64,
    pub splits: usize,
    /// Fraction of the training set drawn (without replacement) per split.
    pub split_fraction: f64,
    /// Scattering scales J to try; empty means `log2(N) - 1`.
    pub scales: Vec<usize>,
    pub angles: usize,
    pub order: usize,
    pub variants: Vec<Variant>,
    pub kernels: Vec<KernelChoice>,
    pub standardize_features: bool,
    pub pca_retain: Option<f64>,
    pub gp_iters: usize,
    pub gp_lr: f64,
    pub trivial: bool,
    pub bo: bool,
    pub bo_task: Task,
    pub bo_pool: usize,
    pub bo_init: usize,
    pub bo_iters: usize,
    pub bo_seeds: usize,
    pub bo_kernel: KernelChoice,
    pub bo_gp_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            task: Task::BlobCount,
            image_size: 32,
            n_train: 500,
            n_test: 250,
            shift: ShiftPreset::Both,
            seed: 0,
            splits: 5,
            split_fraction: 0.8,
            scales: Vec::new(),
            angles: 8,
            order: 2,
            variants: vec![Variant::Global],
            kernels: vec![KernelChoice::new(KernelFamily::Rbf, false)],
            standardize_features: true,
            pca_retain: None,
            gp_iters: 500,
            gp_lr: 0.05,
            trivial: true,
            bo: false,
            bo_task: Task::ChargeEnergy,
            bo_pool: 1000,
            bo_init: 50,
            bo_iters: 50,
            bo_seeds: 5,
            bo_kernel: KernelChoice::new(KernelFamily::Matern52, false),
            bo_gp_iters: 500,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean '{value}' for '{key}'"))),
    }
}

fn parse_list<T>(key: &str, value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = value.split_whitespace().map(f).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!("'{key}' needs at least one value")));
    }
    Ok(items)
}

impl PipelineConfig {
    /// Keys accepted by [`PipelineConfig::set`], in documentation order.
    pub const KEYS: [&'static str; 26] = [
        "task", "image_size", "n_train", "n_test", "shift", "seed", "splits", "split_fraction", "scales", "angles",
        "order", "variants", "kernels", "standardize_features", "pca_retain", "gp_iters", "gp_lr", "trivial", "bo",
        "bo_task", "bo_pool", "bo_init", "bo_iters", "bo_seeds", "bo_kernel", "bo_gp_iters",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "task" => self.task = v.parse()?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "n_train" => self.n_train = parse_value(key, v)?,
            "n_test" => self.n_test = parse_value(key, v)?,
            "shift" => self.shift = v.parse()?,
            "seed" => self.seed = parse_value(key, v)?,
            "splits" => self.splits = parse_value(key, v)?,
            "split_fraction" => self.split_fraction = parse_value(key, v)?,
            "scales" => {
                self.scales = if v == "auto" { Vec::new() } else { parse_list(key, v, |s| parse_value(key, s))? }
            }
            "angles" => self.angles = parse_value(key, v)?,
            "order" => self.order = parse_value(key, v)?,
            "variants" => self.variants = parse_list(key, v, str::parse)?,
            "kernels" => self.kernels = if v == "none" { Vec::new() } else { parse_list(key, v, str::parse)? },
            "standardize_features" => self.standardize_features = parse_bool(key, v)?,
            "pca_retain" => self.pca_retain = if v == "none" { None } else { Some(parse_value(key, v)?) },
            "gp_iters" => self.gp_iters = parse_value(key, v)?,
            "gp_lr" => self.gp_lr = parse_value(key, v)?,
            "trivial" => self.trivial = parse_bool(key, v)?,
            "bo" => self.bo = parse_bool(key, v)?,
            "bo_task" => self.bo_task = v.parse()?,
            "bo_pool" => self.bo_pool = parse_value(key, v)?,
            "bo_init" => self.bo_init = parse_value(key, v)?,
            "bo_iters" => self.bo_iters = parse_value(key, v)?,
            "bo_seeds" => self.bo_seeds = parse_value(key, v)?,
            "bo_kernel" => self.bo_kernel = v.parse()?,
            "bo_gp_iters" => self.bo_gp_iters = parse_value(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected 'key = value'".into(),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn resolved_scales(&self) -> Vec<usize> {
        if self.scales.is_empty() {
            vec![(self.image_size.max(2).ilog2() as usize).saturating_sub(1).max(1)]
        } else {
            self.scales.clone()
        }
    }

    pub fn split_size(&self) -> usize {
        ((self.split_fraction * self.n_train as f64).round() as usize).clamp(2, self.n_train)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.n_test < 1 {
            return Err(Error::InvalidConfig("need n_train >= 2 and n_test >= 1".into()));
        }
        if self.splits == 0 {
            return Err(Error::InvalidConfig("splits must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("split_fraction {} not in (0, 1]", self.split_fraction)));
        }
        for cfg in self.scattering_configs() {
            cfg.validate()?;
        }
        if self.bo {
            BOConfig { n_init: self.bo_init, n_iters: self.bo_iters, pool_size: self.bo_pool, ..Default::default() }
                .validate(self.bo_pool)?;
            if self.bo_seeds == 0 {
                return Err(Error::InvalidConfig("bo_seeds must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn scattering_configs(&self) -> Vec<ScatteringConfig> {
        let mut out = Vec::new();
        for &j in &self.resolved_scales() {
            for &v in &self.variants {
                out.push(ScatteringConfig::new(FilterBankConfig::new(self.image_size, j, self.angles), self.order, v));
            }
        }
        out
    }

    /// Canonical `key = value` rendering (round-trips through `apply_text`).
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(" ");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("task", self.task.to_string());
        kv("image_size", self.image_size.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_test", self.n_test.to_string());
        kv("shift", self.shift.as_str().into());
        kv("seed", self.seed.to_string());
        kv("splits", self.splits.to_string());
        kv("split_fraction", self.split_fraction.to_string());
        kv("scales", if self.scales.is_empty() { "auto".into() } else { join(self.scales.iter().map(|s| s.to_string()).collect()) });
        kv("angles", self.angles.to_string());
        kv("order", self.order.to_string());
        kv("variants", join(self.variants.iter().map(|v| v.to_string()).collect()));
        kv("kernels", if self.kernels.is_empty() { "none".into() } else { join(self.kernels.iter().map(|k| k.to_string()).collect()) });
        kv("standardize_features", self.standardize_features.to_string());
        kv("pca_retain", self.pca_retain.map_or("none".into(), |r| r.to_string()));
        kv("gp_iters", self.gp_iters.to_string());
        kv("gp_lr", self.gp_lr.to_string());
        kv("trivial", self.trivial.to_string());
        kv("bo", self.bo.to_string());
        kv("bo_task", self.bo_task.to_string());
        kv("bo_pool", self.bo_pool.to_string());
        kv("bo_init", self.bo_init.to_string());
        kv("bo_iters", self.bo_iters.to_string());
        kv("bo_seeds", self.bo_seeds.to_string());
        kv("bo_kernel", self.bo_kernel.to_string());
        kv("bo_gp_iters", self.bo_gp_iters.to_string());
        out
    }
}

/// Scattering features for every image, rows in input order.
pub fn extract_features(images: &[Image], cfg: &ScatteringConfig) -> Result<FeatureCache> {
    let scatterer = Scatterer::new(*cfg)?;
    let rows = scatterer.scatter_batch(images)?;
    let d = rows.first().map_or(0, |r| r.len());
    let m = DMatrix::from_fn(rows.len(), d, |r, c| rows[r].values[c]);
    Ok(FeatureCache::new(cfg.digest(), m))
}

/// Training-row indices of split `s`: a seeded subsample that depends only
/// on the experiment seed, so every method shares it.
pub fn split_indices(seed: u64, split: usize, n_train: usize, size: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &format!("split/{split}")));
    let mut idx = index::sample(&mut rng, n_train, size.min(n_train)).into_vec();
    idx.sort_unstable();
    idx
}

pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

pub fn kernel_tag(k: &KernelChoice) -> String {
    k.to_string().replace(',', "-")
}

pub fn method_name(cfg: &ScatteringConfig, k: &KernelChoice) -> String {
    format!("scattering_J{}_{}_{}", cfg.bank.num_scales, cfg.variant, kernel_tag(k))
}

/// Fit one GP head on a split and score it on the test rows.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_gp(
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_test: &DMatrix<f64>,
    y_test: &[f64],
    kernel: KernelChoice,
    standardize: bool,
    pca_retain: Option<f64>,
    opt: &OptimizerConfig,
) -> Result<(MetricsReport, GPState)> {
    let pre = Preprocess::fit(x_train, standardize, pca_retain)?;
    let gp = GPState::fit(&pre.apply(x_train)?, y_train, kernel, opt)?;
    let pred = gp.predict(&pre.apply(x_test)?)?;
    Ok((compute_metrics(&pred, y_test)?, gp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub per_split: Vec<MetricsReport>,
    pub aggregate: AggregateReport,
    /// Final training negative LML per split (GP methods only).
    pub train_neg_lml: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSeedResult {
    pub seed: u64,
    pub bo_final_regret: f64,
    pub rs_final_regret: f64,
    pub bo_normalized_regret: f64,
    pub rs_normalized_regret: f64,
    pub bo_standardized_regret: Vec<f64>,
    pub rs_standardized_regret: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSummary {
    pub seeds: Vec<BoSeedResult>,
    pub bo_median_final_regret: f64,
    pub rs_median_final_regret: f64,
    pub bo_median_normalized_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub methods: Vec<MethodResult>,
    pub bo: Option<BoSummary>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Runs BO and random search on a synthetic pool for several seeds.
pub fn run_bo_study(cfg: &PipelineConfig, scat: &ScatteringConfig, out: Option<&Path>) -> Result<BoSummary> {
    let spec = SynthSpec::new(cfg.bo_task, cfg.image_size, ShiftPreset::None, substream(cfg.seed, "bo/pool-data"));
    let samples = synth_generate(&spec, Split::Train, cfg.bo_pool)?;
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let feats = extract_features(&images, scat)?.features;
    let pre = Preprocess::fit(&feats, cfg.standardize_features, cfg.pca_retain)?;
    let x = pre.apply(&feats)?;
    let oracle = |i: usize| targets[i];

    let mut seeds = Vec::new();
    let (mut bo_curves, mut rs_curves) = (Vec::new(), Vec::new());
    for k in 0..cfg.bo_seeds {
        let seed = substream(cfg.seed, &format!("bo/run/{k}"));
        let bo_cfg = BOConfig {
            n_init: cfg.bo_init,
            n_iters: cfg.bo_iters,
            pool_size: cfg.bo_pool,
            direction: Direction::Minimize,
            kernel: cfg.bo_kernel,
            refit_every: 1,
            seed,
            gp: OptimizerConfig { iters: cfg.bo_gp_iters, lr: cfg.gp_lr, seed, fixed_noise: None },
        };
        log::info!("BO seed {k}");
        let bo = run_bo(&x, oracle, &bo_cfg).map_err(|e| e.context(format!("bo seed {k}")))?;
        let rs = random_search(x.nrows(), oracle, &bo_cfg)?;
        if let Some(dir) = out {
            bo.save_csv(&dir.join(format!("bo_seed{k}.csv")))?;
            rs.save_csv(&dir.join(format!("rs_seed{k}.csv")))?;
        }
        bo_curves.push(bo.records.iter().map(|r| r.regret).collect::<Vec<_>>());
        rs_curves.push(rs.records.iter().map(|r| r.regret).collect::<Vec<_>>());
        seeds.push(seed_result(seed, &bo, &rs));
    }
    let summary = BoSummary {
        bo_median_final_regret: median(&seeds.iter().map(|s| s.bo_final_regret).collect::<Vec<_>>()),
        rs_median_final_regret: median(&seeds.iter().map(|s| s.rs_final_regret).collect::<Vec<_>>()),
        bo_median_normalized_regret: median(&seeds.iter().map(|s| s.bo_normalized_regret).collect::<Vec<_>>()),
        seeds,
    };
    if let Some(dir) = out {
        write_json(&dir.join("summary.json"), &summary)?;
        let bo_band = regret_band(&bo_curves)?;
        let rs_band = regret_band(&rs_curves)?;
        let mut csv = String::from("step,iteration,bo_mean,bo_ci_low,bo_ci_high,rs_mean,rs_ci_low,rs_ci_high\n");
        for (step, (b, r)) in bo_band.iter().zip(&rs_band).enumerate() {
            let iteration = (step + 1).saturating_sub(cfg.bo_init);
            let _ = writeln!(csv, "{step},{iteration},{},{},{},{},{},{}", b.0, b.1, b.2, r.0, r.1, r.2);
        }
        let p = dir.join("regret_curve.csv");
        fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }
    Ok(summary)
}

fn seed_result(seed: u64, bo: &BOTrace, rs: &BOTrace) -> BoSeedResult {
    BoSeedResult {
        seed,
        bo_final_regret: bo.final_regret(),
        rs_final_regret: rs.final_regret(),
        bo_normalized_regret: bo.normalized_final_regret(),
        rs_normalized_regret: rs.normalized_final_regret(),
        bo_standardized_regret: bo.standardized_regret(),
        rs_standardized_regret: rs.standardized_regret(),
    }
}

/// Runs the whole experiment, writing artifacts under `out` when given.
pub fn reproduce_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineSummary> {
    cfg.validate()?;
    let ctx = |stage: &'static str| move |e: Error| e.context(stage);
    let spec = SynthSpec::new(cfg.task, cfg.image_size, cfg.shift, substream(cfg.seed, "synth"));
    let train = synth_generate(&spec, Split::Train, cfg.n_train).map_err(ctx("synth gen"))?;
    let test = synth_generate(&spec, Split::Test, cfg.n_test).map_err(ctx("synth gen"))?;
    if let Some(dir) = out {
        mkdir(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(dir.join("config.txt"), e))?;
        write_synthetic(&dir.join("data"), &train, &test).map_err(ctx("synth gen"))?;
    }
    let y_train: Vec<f64> = train.iter().map(|s| s.target).collect();
    let y_test: Vec<f64> = test.iter().map(|s| s.target).collect();
    let images: Vec<Image> = train.iter().chain(&test).map(|s| s.image.clone()).collect();
    let size = cfg.split_size();
    let splits: Vec<Vec<usize>> = (0..cfg.splits).map(|s| split_indices(cfg.seed, s, cfg.n_train, size)).collect();

    let mut methods: BTreeMap<String, (Vec<MetricsReport>, Vec<f64>)> = BTreeMap::new();
    let mut order = Vec::new();
    let mut record = |name: String, r: MetricsReport, nlml: Option<f64>, dir: Option<&Path>| -> Result<()> {
        let entry = methods.entry(name.clone()).or_insert_with(|| {
            order.push(name.clone());
            (Vec::new(), Vec::new())
        });
        if let Some(d) = dir {
            let mdir = d.join("metrics").join(&name);
            mkdir(&mdir)?;
            write_json(&mdir.join(format!("split_{}.json", entry.0.len())), &r)?;
        }
        entry.0.push(r);
        entry.1.extend(nlml);
        Ok(())
    };

    if cfg.trivial {
        for idx in &splits {
            let yt: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
            record("trivial".into(), trivial_baseline(&yt, &y_test)?, None, out)?;
        }
    }

    for scat in cfg.scattering_configs().into_iter().filter(|_| !cfg.kernels.is_empty()) {
        log::info!("extracting features J={} variant={}", scat.bank.num_scales, scat.variant);
        let cache = extract_features(&images, &scat).map_err(ctx("features extract"))?;
        if let Some(dir) = out {
            let fdir = dir.join("features");
            mkdir(&fdir)?;
            write_cache(&fdir.join(format!("J{}_{}.bscf", scat.bank.num_scales, scat.variant)), &cache)?;
        }
        let x_all = cache.features;
        let test_rows: Vec<usize> = (cfg.n_train..cfg.n_train + cfg.n_test).collect();
        let x_test = select_rows(&x_all, &test_rows);
        for kernel in &cfg.kernels {
            let name = method_name(&scat, kernel);
            for (s, idx) in splits.iter().enumerate() {
                log::info!("{name}: split {s}");
                let xt = select_rows(&x_all, idx);
                let yt: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
                let opt = OptimizerConfig {
                    iters: cfg.gp_iters,
                    lr: cfg.gp_lr,
                    seed: substream(cfg.seed, &format!("gp/{name}/{s}")),
                    fixed_noise: None,
                };
                let (report, gp) = evaluate_gp(&xt, &yt, &x_test, &y_test, *kernel, cfg.standardize_features, cfg.pca_retain, &opt)
                    .map_err(|e| e.context(format!("gp fit/eval {name} split {s}")))?;
                let nlml = gp.fit_info.as_ref().map(|f| f.final_neg_lml);
                record(name.clone(), report, nlml, out)?;
            }
        }
    }

    let mut results = Vec::new();
    for name in &order {
        let (reports, nlml) = &methods[name];
        results.push(MethodResult {
            method: name.clone(),
            aggregate: aggregate(reports)?,
            per_split: reports.clone(),
            train_neg_lml: nlml.clone(),
        });
    }
    if let Some(dir) = out {
        let table: Vec<(String, AggregateReport)> = results.iter().map(|m| (m.method.clone(), m.aggregate.clone())).collect();
        let agg: BTreeMap<&str, &AggregateReport> = results.iter().map(|m| (m.method.as_str(), &m.aggregate)).collect();
        write_json(&dir.join("aggregate.json"), &agg)?;
        let p = dir.join("aggregate.txt");
        fs::write(&p, format_table(&table)).map_err(|e| Error::io(&p, e))?;
    }

    let bo = if cfg.bo {
        let scat = cfg.scattering_configs()[0];
        let bo_dir: Option<PathBuf> = out.map(|d| d.join("bo"));
        if let Some(d) = &bo_dir {
            mkdir(d)?;
        }
        Some(run_bo_study(cfg, &scat, bo_dir.as_deref()).map_err(ctx("bo run"))?)
    } else {
        None
    };
    Ok(PipelineSummary { methods: results, bo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(
            "# comment\nkernels = rbf matern52,ard\nscales = 2 3\npca_retain = 0.99 # trailing\nbo = yes\n",
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(cfg.kernels.len(), 2);
        assert!(cfg.kernels[1].ard);
        assert_eq!(cfg.scales, vec![2, 3]);
        assert_eq!(cfg.pca_retain, Some(0.99));
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("c")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.to_text().lines().count(), PipelineConfig::KEYS.len());
    }

    #[test]
    fn config_errors_name_the_line() {
        let mut cfg = PipelineConfig::default();
        match cfg.apply_text("seed = 1\nfoo = 2\n", Path::new("c")) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(cfg.apply_text("splits\n", Path::new("c")).is_err());
    }

    #[test]
    fn default_scale_follows_image_size() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.resolved_scales(), vec![4]);
        assert_eq!(cfg.split_size(), 400);
    }

    #[test]
    fn splits_are_synchronized_and_distinct() {
        let a = split_indices(5, 0, 100, 80);
        assert_eq!(a, split_indices(5, 0, 100, 80));
        assert_ne!(a, split_indices(5, 1, 100, 80));
        assert_eq!(a.len(), 80);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn tiny_pipeline_is_deterministic() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(
            "image_size = 16\nn_train = 20\nn_test = 10\nsplits = 2\nangles = 4\ngp_iters = 5\nbo = true\nbo_pool = 30\nbo_init = 5\nbo_iters = 3\nbo_seeds = 2\nbo_gp_iters = 5\n",
            Path::new("c"),
        )
        .unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = reproduce_pipeline(&cfg, Some(d1.path())).unwrap();
        let b = reproduce_pipeline(&cfg, Some(d2.path())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.methods.len(), 2);
        for f in ["aggregate.json", "aggregate.txt", "bo/bo_seed0.csv", "bo/regret_curve.csv", "metrics/trivial/split_1.json"] {
            assert_eq!(fs::read(d1.path().join(f)).unwrap(), fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(a.methods[0].aggregate.pi_mu.mean, 3.92);
    }
}
