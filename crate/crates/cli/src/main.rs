//! `bscat`: command-line front end for the bayes-scatter library.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure (or a
//! filter bank that violates its frame bounds).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bayes_scatter::bayesopt::{random_search, run_bo, BOConfig, Direction};
use bayes_scatter::datasets::{read_cache, synth_generate, write_cache, write_synthetic, Manifest, ShiftPreset, Split, SynthSpec, Task};
use bayes_scatter::filterbank::{littlewood_paley_report, FilterBank, FilterBankConfig};
use bayes_scatter::gp::{GPState, OptimizerConfig, PredictiveDistribution};
use bayes_scatter::kernels::KernelChoice;
use bayes_scatter::metrics::{compute_metrics, format_report};
use bayes_scatter::model::{hex, Head, Preprocess, SavedModel};
use bayes_scatter::pipeline::{extract_features, reproduce_pipeline, select_rows, PipelineConfig};
use bayes_scatter::scattering::{ScatteringConfig, Variant};
use bayes_scatter::svgp::{SVGPState, SvgpConfig};
use bayes_scatter::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

#[derive(Parser, Debug)]
#[command(name = "bscat", version, about = "Wavelet scattering features with Gaussian-process heads")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter-bank diagnostics.
    #[command(subcommand)]
    Filterbank(FilterbankCmd),
    /// Synthetic datasets.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Scattering feature extraction.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Exact Gaussian-process head.
    #[command(subcommand)]
    Gp(HeadCmd<GpFitArgs>),
    /// Sparse variational GP head.
    #[command(subcommand)]
    Svgp(HeadCmd<SvgpFitArgs>),
    /// Uncertainty metrics.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Pool-based Bayesian optimization.
    #[command(subcommand)]
    Bo(BoCmd),
    /// Full experiment from a config file.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand, Debug)]
enum FilterbankCmd {
    /// Print the Littlewood–Paley report; exits 2 if frame bounds fail.
    Check {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        j: usize,
        #[arg(long, default_value_t = 8)]
        l: usize,
        /// Emit the full report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    BlobCount,
    ChargeEnergy,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::BlobCount => Task::BlobCount,
            TaskArg::ChargeEnergy => Task::ChargeEnergy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ShiftArg {
    None,
    Intensity,
    Texture,
    Both,
}

impl From<ShiftArg> for ShiftPreset {
    fn from(s: ShiftArg) -> ShiftPreset {
        match s {
            ShiftArg::None => ShiftPreset::None,
            ShiftArg::Intensity => ShiftPreset::Intensity,
            ShiftArg::Texture => ShiftPreset::Texture,
            ShiftArg::Both => ShiftPreset::Both,
        }
    }
}

#[derive(Subcommand, Debug)]
enum SynthCmd {
    /// Generate images plus a manifest.
    Gen {
        #[arg(long, value_enum, default_value = "blob-count")]
        task: TaskArg,
        #[arg(long, default_value_t = 500)]
        n_train: usize,
        #[arg(long, default_value_t = 250)]
        n_test: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, value_enum, default_value = "none")]
        shift: ShiftArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum FeaturesCmd {
    /// Scatter every image in a manifest into a feature cache.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of scales [default: log2(N) - 1].
        #[arg(long)]
        j: Option<usize>,
        #[arg(long, default_value_t = 8)]
        l: usize,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, value_parser = parse_variant, default_value = "global")]
        variant: Variant,
        /// Accepted for uniformity; extraction is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone)]
struct FeatureOpts {
    /// Feature cache (rows follow the manifest's records).
    #[arg(long)]
    features: PathBuf,
    /// Manifest holding the targets and splits.
    #[arg(long)]
    targets: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct PreprocessOpts {
    /// Z-score features using training statistics.
    #[arg(long, value_parser = parse_on_off, default_value = "on", action = clap::ArgAction::Set)]
    standardize: bool,
    /// Keep the leading principal components explaining this variance fraction.
    #[arg(long)]
    pca: Option<f64>,
}

#[derive(Args, Debug)]
struct GpFitArgs {
    #[command(flatten)]
    data: FeatureOpts,
    #[command(flatten)]
    pre: PreprocessOpts,
    /// Kernel: rbf, matern52 or linear, with optional ",ard".
    #[arg(long, value_parser = parse_kernel, default_value = "rbf")]
    kernel: KernelChoice,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Hold the noise variance fixed at this value.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SvgpFitArgs {
    #[command(flatten)]
    data: FeatureOpts,
    #[command(flatten)]
    pre: PreprocessOpts,
    #[arg(long, value_parser = parse_kernel, default_value = "rbf")]
    kernel: KernelChoice,
    /// Inducing points (capped at the training-set size).
    #[arg(long, default_value_t = 1024)]
    inducing: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: FeatureOpts,
    /// Which manifest split to score.
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Also write the predictive distribution as JSON.
    #[arg(long)]
    pred_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum HeadCmd<F: Args> {
    /// Fit on the manifest's train split.
    Fit(F),
    /// Score a saved model.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
enum MetricsCmd {
    /// Metrics table for saved predictions against ground truth.
    Report {
        /// Predictive distribution JSON (as written by `eval --pred-out`).
        #[arg(long)]
        pred: PathBuf,
        /// Manifest (test-split targets) or JSON array of targets.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand, Debug)]
enum BoCmd {
    /// Run BO (and optionally random search) over a candidate pool.
    Run {
        #[arg(long)]
        pool_features: PathBuf,
        /// Manifest whose targets (all records, in order) are the oracle.
        #[arg(long)]
        pool_targets: PathBuf,
        #[arg(long, default_value_t = 50)]
        init: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        /// Candidates drawn from the cache (capped at its row count).
        #[arg(long, default_value_t = 1000)]
        pool: usize,
        #[arg(long, value_parser = parse_kernel, default_value = "matern52")]
        kernel: KernelChoice,
        #[arg(long, value_parser = parse_direction, default_value = "min")]
        direction: Direction,
        #[arg(long, default_value_t = 500)]
        gp_iters: usize,
        #[arg(long, default_value_t = 0.05)]
        gp_lr: f64,
        #[command(flatten)]
        pre: PreprocessOpts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace_out: PathBuf,
        /// Random-search trace with the same initial design.
        #[arg(long)]
        random_trace_out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum PipelineCmd {
    /// Synth → features → GP fits per split → aggregate table (→ BO).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "bscat-out")]
        out: PathBuf,
        /// Overrides the config file's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override any config key (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelChoice, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected 'on' or 'off', got '{s}'")),
    }
}

/// Failure that should exit with a given code after printing `message`.
struct Exit {
    code: u8,
    message: Option<String>,
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { 2 } else { 1 };
        // Display already walks the context chain.
        Exit { code, message: Some(format!("error: {e}")) }
    }
}

type CmdResult = std::result::Result<(), Exit>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size thread pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, message }) => {
            if let Some(m) = message {
                eprintln!("{m}");
            }
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Filterbank(FilterbankCmd::Check { n, j, l, json }) => filterbank_check(n, j, l, json),
        Command::Synth(SynthCmd::Gen { task, n_train, n_test, image_size, shift, seed, out }) => {
            synth_gen(task.into(), n_train, n_test, image_size, shift.into(), seed, &out).map_err(|e| e.context("synth gen").into())
        }
        Command::Features(FeaturesCmd::Extract { manifest, out, j, l, order, variant, seed: _ }) => {
            features_extract(&manifest, &out, j, l, order, variant).map_err(|e| e.context("features extract").into())
        }
        Command::Gp(HeadCmd::Fit(a)) => gp_fit(&a).map_err(|e| e.context("gp fit").into()),
        Command::Gp(HeadCmd::Eval(a)) => eval(&a).map_err(|e| e.context("gp eval").into()),
        Command::Svgp(HeadCmd::Fit(a)) => svgp_fit(&a).map_err(|e| e.context("svgp fit").into()),
        Command::Svgp(HeadCmd::Eval(a)) => eval(&a).map_err(|e| e.context("svgp eval").into()),
        Command::Metrics(MetricsCmd::Report { pred, truth, json }) => {
            metrics_report(&pred, &truth, json).map_err(|e| e.context("metrics report").into())
        }
        Command::Bo(BoCmd::Run {
            pool_features,
            pool_targets,
            init,
            iters,
            pool,
            kernel,
            direction,
            gp_iters,
            gp_lr,
            pre,
            seed,
            trace_out,
            random_trace_out,
        }) => {
            let cfg = BOConfig {
                n_init: init,
                n_iters: iters,
                pool_size: pool,
                direction,
                kernel,
                refit_every: 1,
                seed,
                gp: OptimizerConfig { iters: gp_iters, lr: gp_lr, seed, fixed_noise: None },
            };
            bo_run(&pool_features, &pool_targets, cfg, &pre, &trace_out, random_trace_out.as_deref())
                .map_err(|e| e.context("bo run").into())
        }
        Command::Pipeline(PipelineCmd::Run { config, out, seed, overrides }) => {
            pipeline_run(&config, &out, seed, &overrides).map_err(|e| e.context("pipeline run").into())
        }
    }
}

fn filterbank_check(n: usize, j: usize, l: usize, json: bool) -> CmdResult {
    let bank = FilterBank::build(FilterBankConfig::new(n, j, l)).map_err(|e| e.context("filterbank check"))?;
    let r = littlewood_paley_report(&bank);
    if json {
        println!("{}", serde_json::to_string_pretty(&r).map_err(Error::from)?);
    } else {
        println!("N={} J={} L={}", r.image_size, r.num_scales, r.num_angles);
        println!("LP min  {:.6} at bin {:?} (w = {:.4}, {:.4})", r.min, r.argmin, r.argmin_frequency.0, r.argmin_frequency.1);
        println!("LP max  {:.6}", r.max);
        println!("LP mean {:.6}", r.mean);
        println!("Lipschitz bound {:.6}", bank.lipschitz_bound());
        println!("frame bounds {}", if r.frame_bounds_hold { "hold" } else { "VIOLATED" });
    }
    if r.frame_bounds_hold {
        Ok(())
    } else {
        Err(Exit { code: 2, message: Some("error: filter bank violates its frame bounds".into()) })
    }
}

fn synth_gen(task: Task, n_train: usize, n_test: usize, size: usize, shift: ShiftPreset, seed: u64, out: &Path) -> Result<()> {
    let spec = SynthSpec::new(task, size, shift, seed);
    let gen = |split, n| if n == 0 { Ok(Vec::new()) } else { synth_generate(&spec, split, n) };
    let train = gen(Split::Train, n_train)?;
    let test = gen(Split::Test, n_test)?;
    let m = write_synthetic(out, &train, &test)?;
    println!("wrote {} records to {}", m.records.len(), out.join("manifest.jsonl").display());
    Ok(())
}

fn features_extract(manifest: &Path, out: &Path, j: Option<usize>, l: usize, order: usize, variant: Variant) -> Result<()> {
    let m = Manifest::read(manifest)?;
    let images = m.load_images()?;
    let n = images.first().map(|im| im.size()).ok_or_else(|| Error::InvalidConfig("manifest has no records".into()))?;
    let j = j.unwrap_or_else(|| (n.max(2).ilog2() as usize).saturating_sub(1).max(1));
    let cfg = ScatteringConfig::new(FilterBankConfig::new(n, j, l), order, variant);
    let cache = extract_features(&images, &cfg)?;
    write_cache(out, &cache)?;
    println!("wrote {}x{} features (J={j}, L={l}, M={order}, {variant}) to {}", cache.rows(), cache.dim(), out.display());
    Ok(())
}

/// Feature rows and targets of one manifest split, plus the cache digest.
fn load_split(data: &FeatureOpts, split: Split) -> Result<(DMatrix<f64>, Vec<f64>, [u8; 32])> {
    let cache = read_cache(&data.features, None)?;
    let m = Manifest::read(&data.targets)?;
    if cache.rows() != m.records.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature cache has {} rows but manifest has {} records",
            cache.rows(),
            m.records.len()
        )));
    }
    let idx = m.indices(split);
    let y = idx.iter().map(|&i| m.records[i].target).collect();
    Ok((select_rows(&cache.features, &idx), y, cache.digest))
}

fn gp_fit(a: &GpFitArgs) -> Result<()> {
    let (x, y, digest) = load_split(&a.data, Split::Train)?;
    let pre = Preprocess::fit(&x, a.pre.standardize, a.pre.pca)?;
    let opt = OptimizerConfig { iters: a.iters, lr: a.lr, seed: a.seed, fixed_noise: a.noise };
    let gp = GPState::fit(&pre.apply(&x)?, &y, a.kernel, &opt)?;
    if let Some(info) = &gp.fit_info {
        println!("negative log marginal likelihood: {:.6} -> {:.6}", info.initial_neg_lml, info.final_neg_lml);
    }
    println!("noise variance {:.6e}, signal variance {:.6e}", gp.noise_variance(), gp.spec.signal_variance());
    SavedModel { feature_digest: hex(&digest), preprocess: pre, head: Head::Exact(gp) }.save(&a.out)
}

fn svgp_fit(a: &SvgpFitArgs) -> Result<()> {
    let (x, y, digest) = load_split(&a.data, Split::Train)?;
    let pre = Preprocess::fit(&x, a.pre.standardize, a.pre.pca)?;
    let inducing = a.inducing.min(x.nrows());
    if inducing < a.inducing {
        log::warn!("using {inducing} inducing points (training set size)");
    }
    let cfg = SvgpConfig {
        num_inducing: inducing,
        batch_size: a.batch,
        steps: a.steps,
        lr: a.lr,
        seed: a.seed,
        ..SvgpConfig::default()
    };
    let z = pre.apply(&x)?;
    let state = SVGPState::fit(&z, &y, a.kernel, &cfg)?;
    let y_std = state.target_stats.standardize_all(&y);
    let elbo = state.elbo(&z, &y_std, z.nrows())?;
    println!("ELBO (standardized targets): {elbo:.6}");
    SavedModel { feature_digest: hex(&digest), preprocess: pre, head: Head::Svgp(state) }.save(&a.out)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = SavedModel::load(&a.model)?;
    let (x, y, digest) = load_split(&a.data, a.split)?;
    if hex(&digest) != model.feature_digest {
        return Err(Error::ConfigDigestMismatch);
    }
    let pred = model.predict(&x)?;
    let report = compute_metrics(&pred, &y)?;
    print!("{}", format_report(&report));
    if let Some(p) = &a.metrics_out {
        write_json(p, &report)?;
    }
    if let Some(p) = &a.pred_out {
        write_json(p, &pred)?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn metrics_report(pred: &Path, truth: &Path, json: bool) -> Result<()> {
    let text = std::fs::read_to_string(pred).map_err(|e| Error::io(pred, e))?;
    let pred: PredictiveDistribution = serde_json::from_str(&text)?;
    let y = if truth.extension().is_some_and(|e| e == "jsonl") {
        Manifest::read(truth)?.targets(Some(Split::Test))
    } else {
        let t = std::fs::read_to_string(truth).map_err(|e| Error::io(truth, e))?;
        serde_json::from_str::<Vec<f64>>(&t)
            .map_err(|e| Error::Format { path: truth.to_path_buf(), message: e.to_string() })?
    };
    let report = compute_metrics(&pred, &y)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", format_report(&report));
    }
    Ok(())
}

fn bo_run(
    features: &Path,
    targets: &Path,
    mut cfg: BOConfig,
    pre: &PreprocessOpts,
    trace_out: &Path,
    random_out: Option<&Path>,
) -> Result<()> {
    let cache = read_cache(features, None)?;
    let m = Manifest::read(targets)?;
    if cache.rows() != m.records.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature cache has {} rows but manifest has {} records",
            cache.rows(),
            m.records.len()
        )));
    }
    let y = m.targets(None);
    let p = Preprocess::fit(&cache.features, pre.standardize, pre.pca)?;
    let x = p.apply(&cache.features)?;
    cfg.pool_size = cfg.pool_size.min(x.nrows());
    let trace = run_bo(&x, |i| y[i], &cfg)?;
    trace.save_csv(trace_out)?;
    println!(
        "BO: final regret {:.6e}, normalized {:.4}",
        trace.final_regret(),
        trace.normalized_final_regret()
    );
    if let Some(rp) = random_out {
        let rs = random_search(x.nrows(), |i| y[i], &cfg)?;
        rs.save_csv(rp)?;
        println!("random search: final regret {:.6e}, normalized {:.4}", rs.final_regret(), rs.normalized_final_regret());
    }
    Ok(())
}

fn pipeline_run(config: &Path, out: &Path, seed: Option<u64>, overrides: &[String]) -> Result<()> {
    let mut cfg = PipelineConfig::from_file(config)?;
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override '{o}' is not KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summary = reproduce_pipeline(&cfg, Some(out))?;
    let table = std::fs::read_to_string(out.join("aggregate.txt")).map_err(|e| Error::io(out, e))?;
    print!("{table}");
    if let Some(bo) = &summary.bo {
        println!(
            "BO median final regret {:.6e} (random search {:.6e}); median normalized {:.4}",
            bo.bo_median_final_regret, bo.rs_median_final_regret, bo.bo_median_normalized_regret
        );
    }
    println!("results in {}", out.display());
    Ok(())
}
