//! Regression and uncertainty metrics on the standardized target scale.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gp::{PredictiveDistribution, TargetStats};

/// Half-width multiplier of the central 95% Gaussian interval.
pub const PI_Z: f64 = 1.96;
/// Quantile levels used for coverage: 0.05, 0.10, ..., 0.95.
pub fn quantile_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Standardized units.
    pub rmse: f64,
    /// Original target units.
    pub rmse_raw: f64,
    pub nll: f64,
    pub qce: f64,
    pub pi_mu: f64,
    pub pi_sigma: f64,
    pub n_test: usize,
}

/// Running mean and population variance (Welford). Exact for constant
/// input, which keeps the width spread of a constant-sigma predictor at 0.
fn mean_and_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        let delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    if n == 0.0 {
        (f64::NAN, f64::NAN)
    } else {
        (mean, (m2 / n).max(0.0).sqrt())
    }
}

/// Metrics of `pred` against raw targets. Everything except `rmse_raw` is on
/// the scale set by the predictor's training statistics.
pub fn compute_metrics(pred: &PredictiveDistribution, y_true_raw: &[f64]) -> Result<MetricsReport> {
    let n = pred.len();
    if y_true_raw.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y_true_raw.len() });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("no test points".into()));
    }
    if y_true_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("test targets".into()));
    }
    for (i, &v) in pred.standardized_variance.iter().enumerate() {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositiveVariance { index: i, value: v });
        }
    }
    let stats = pred.target_stats;
    let z: Vec<f64> = y_true_raw.iter().map(|&v| stats.standardize(v)).collect();
    let mu = &pred.standardized_mean;
    let var = &pred.standardized_variance;
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let nf = n as f64;

    let rmse = (z.iter().zip(mu).map(|(y, m)| (y - m).powi(2)).sum::<f64>() / nf).sqrt();
    let rmse_raw = (y_true_raw.iter().zip(&pred.mean).map(|(y, m)| (y - m).powi(2)).sum::<f64>() / nf).sqrt();
    let nll = (0..n)
        .map(|i| 0.5 * (2.0 * std::f64::consts::PI * var[i]).ln() + (z[i] - mu[i]).powi(2) / (2.0 * var[i]))
        .sum::<f64>()
        / nf;

    let std_normal = Normal::standard();
    let grid = quantile_grid();
    let qce = grid
        .iter()
        .map(|&q| {
            let zq = std_normal.inverse_cdf(q);
            let covered = (0..n).filter(|&i| z[i] <= mu[i] + sd[i] * zq).count();
            (covered as f64 / nf - q).abs()
        })
        .sum::<f64>()
        / grid.len() as f64;

    let (pi_mu, pi_sigma) = mean_and_std(sd.iter().map(|s| 2.0 * PI_Z * s));
    Ok(MetricsReport { rmse, rmse_raw, nll, qce, pi_mu, pi_sigma, n_test: n })
}

/// The predictor that reports the training mean and standard deviation for
/// every test point.
pub fn trivial_prediction(y_train_raw: &[f64], n_test: usize) -> Result<PredictiveDistribution> {
    let stats = TargetStats::fit(y_train_raw)?;
    Ok(PredictiveDistribution::from_standardized(vec![0.0; n_test], vec![1.0; n_test], stats))
}

pub fn trivial_baseline(y_train_raw: &[f64], y_test_raw: &[f64]) -> Result<MetricsReport> {
    let pred = trivial_prediction(y_train_raw, y_test_raw.len())?;
    compute_metrics(&pred, y_test_raw)
}

/// Mean and spread of one metric across splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (0 for a single split).
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let (mean, pop_std) = mean_and_std(values.iter().copied());
        let n = values.len() as f64;
        let std = if values.len() < 2 { 0.0 } else { pop_std * (n / (n - 1.0)).sqrt() };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rmse: Summary,
    pub rmse_raw: Summary,
    pub nll: Summary,
    pub qce: Summary,
    pub pi_mu: Summary,
    pub pi_sigma: Summary,
    pub n_splits: usize,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("nothing to aggregate".into()));
    }
    let col = |f: fn(&MetricsReport) -> f64| Summary::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        rmse: col(|r| r.rmse),
        rmse_raw: col(|r| r.rmse_raw),
        nll: col(|r| r.nll),
        qce: col(|r| r.qce),
        pi_mu: col(|r| r.pi_mu),
        pi_sigma: col(|r| r.pi_sigma),
        n_splits: reports.len(),
    })
}

pub const METRIC_COLUMNS: [&str; 6] = ["rmse", "rmse_raw", "nll", "qce", "pi_mu", "pi_sigma"];

fn summaries(a: &AggregateReport) -> [Summary; 6] {
    [a.rmse, a.rmse_raw, a.nll, a.qce, a.pi_mu, a.pi_sigma]
}

/// Fixed-order, column-aligned `mean ± std` table, one row per method.
pub fn format_table(rows: &[(String, AggregateReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("method".len());
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, a)| summaries(a).iter().map(|s| format!("{:.4} ± {:.4}", s.mean, s.std)).collect())
        .collect();
    let col_w: Vec<usize> = (0..METRIC_COLUMNS.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].chars().count())
                .chain(std::iter::once(METRIC_COLUMNS[c].len()))
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<name_w$}", "method");
    for (c, h) in METRIC_COLUMNS.iter().enumerate() {
        let _ = write!(out, "  {:>w$}", h, w = col_w[c]);
    }
    out.push('\n');
    for ((name, _), row) in rows.iter().zip(&cells) {
        let _ = write!(out, "{name:<name_w$}");
        for (c, cell) in row.iter().enumerate() {
            let pad = col_w[c] - cell.chars().count();
            let _ = write!(out, "  {}{}", " ".repeat(pad), cell);
        }
        out.push('\n');
    }
    out
}

/// Single-report version of [`format_table`].
pub fn format_report(r: &MetricsReport) -> String {
    let vals = [r.rmse, r.rmse_raw, r.nll, r.qce, r.pi_mu, r.pi_sigma];
    let mut out = String::new();
    for (name, v) in METRIC_COLUMNS.iter().zip(vals) {
        let _ = writeln!(out, "{name:<9} {v:>12.6}");
    }
    let _ = writeln!(out, "{:<9} {:>12}", "n_test", r.n_test);
    out
}
