//! End-to-end error-scaling benchmark: synthetic logistic-regression
//! posteriors across sample sizes, VI and Laplace fits measured against the
//! grid oracle, per-n replicate summaries, and log-log slope fits.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fit_loglog_slope, SlopeFit};
use crate::error::{GviError, Result};
use crate::fit::{laplace_fit, vi_fit_contraction, GaussianApprox};
use crate::oracle::{GridSpec, GridTable};
use crate::potential::{sigmoid, LogisticPosteriorSpec, LogisticPotential, Potential};
use crate::quadrature::QuadratureRule;
use crate::tensor::WeightMatrix;
use crate::util::{mix_seed, standard_normal_vector, sym_eig_range, sym_op_norm};

fn default_d() -> usize {
    2
}
fn default_n_grid() -> Vec<usize> {
    (1..=10).map(|k| k * 100).collect()
}
fn default_replicates() -> usize {
    10
}
fn default_covariate_scale() -> f64 {
    5.0f64.sqrt()
}
fn default_band() -> usize {
    6
}
fn default_grid_points() -> usize {
    384
}
fn default_grid_sd_multiple() -> f64 {
    12.0
}
fn default_quad_level() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_outer() -> usize {
    100
}
fn default_master_seed() -> u64 {
    20240
}

/// Configuration of the error-scaling benchmark. The default reproduces the
/// figure setup: d = 2, n = 100..1000 in steps of 100, ten replicates, flat
/// prior, covariate scale sqrt(5), fixed master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    /// λ: covariates are drawn from N(0, λ² I).
    pub covariate_scale: f64,
    /// Ground-truth coefficient vector; empty means (1,...,1)/sqrt(d).
    pub theta0: Vec<f64>,
    /// Row-major prior precision; None is the flat prior.
    pub prior_precision: Option<Vec<f64>>,
    pub master_seed: u64,
    /// Width of the per-n replicate band in the summary (middle `band` of
    /// the replicates).
    pub band: usize,
    pub grid_points: usize,
    pub grid_sd_multiple: f64,
    pub quad_level: usize,
    pub tol: f64,
    pub max_outer: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            d: default_d(),
            n_grid: default_n_grid(),
            replicates: default_replicates(),
            covariate_scale: default_covariate_scale(),
            theta0: Vec::new(),
            prior_precision: None,
            master_seed: default_master_seed(),
            band: default_band(),
            grid_points: default_grid_points(),
            grid_sd_multiple: default_grid_sd_multiple(),
            quad_level: default_quad_level(),
            tol: default_tol(),
            max_outer: default_max_outer(),
        }
    }
}

impl BenchConfig {
    /// The figure-reproduction configuration (covariates N(0, 5I)).
    pub fn figure_default() -> Self {
        Self::default()
    }

    /// The theory-check configuration with unit covariate scale.
    pub fn theory_default() -> Self {
        BenchConfig {
            covariate_scale: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(GviError::InvalidArgument {
                context: "d must be at least 1".into(),
            });
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GviError::InvalidArgument {
                context: "n_grid must be ascending and non-empty".into(),
            });
        }
        if self.replicates == 0 {
            return Err(GviError::InvalidArgument {
                context: "need at least one replicate".into(),
            });
        }
        if !(self.covariate_scale > 0.0) {
            return Err(GviError::InvalidArgument {
                context: "covariate scale must be positive".into(),
            });
        }
        if !self.theta0.is_empty() && self.theta0.len() != self.d {
            return Err(GviError::InvalidArgument {
                context: format!("theta0 has {} entries for d = {}", self.theta0.len(), self.d),
            });
        }
        if self.band == 0 || self.band > self.replicates {
            return Err(GviError::InvalidArgument {
                context: format!(
                    "band {} must lie in 1..={} (the replicate count)",
                    self.band, self.replicates
                ),
            });
        }
        Ok(())
    }

    pub fn theta0_vector(&self) -> DVector<f64> {
        if self.theta0.is_empty() {
            DVector::from_element(self.d, 1.0 / (self.d as f64).sqrt())
        } else {
            DVector::from_column_slice(&self.theta0)
        }
    }

    fn prior_matrix(&self) -> Option<DMatrix<f64>> {
        self.prior_precision
            .as_ref()
            .map(|p| DMatrix::from_row_slice(self.d, self.d, p))
    }
}

/// Deterministic substream seed of one (n, replicate) cell.
pub fn cell_seed(config: &BenchConfig, n: usize, replicate: usize) -> u64 {
    mix_seed(mix_seed(config.master_seed, n as u64), replicate as u64)
}

/// Draws the synthetic data set of one cell: covariates X_i ~ N(0, λ²I) and
/// labels Y_i ~ Bern(σ(X_iᵀ θ0)), fully determined by (config, n,
/// replicate).
pub fn generate_dataset(config: &BenchConfig, n: usize, replicate: usize) -> LogisticPosteriorSpec {
    let d = config.d;
    let theta0 = config.theta0_vector();
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(config, n, replicate));
    let mut features = DMatrix::zeros(n, d);
    for i in 0..n {
        let row = standard_normal_vector(d, &mut rng) * config.covariate_scale;
        for j in 0..d {
            features[(i, j)] = row[j];
        }
    }
    let labels = (0..n)
        .map(|i| {
            let t: f64 = (0..d).map(|j| features[(i, j)] * theta0[j]).sum();
            u8::from(rng.random::<f64>() < sigmoid(t))
        })
        .collect();
    LogisticPosteriorSpec {
        features,
        labels,
        prior_precision: config.prior_matrix(),
    }
}

/// One benchmark cell: errors of both fits against the grid truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    /// None on success, otherwise the failure message.
    pub error: Option<String>,
    pub vi_mean_err: Option<f64>,
    pub vi_cov_err: Option<f64>,
    pub vi_tv: Option<f64>,
    pub lap_mean_err: Option<f64>,
    pub lap_cov_err: Option<f64>,
    pub lap_tv: Option<f64>,
    pub vi_grad_residual: Option<f64>,
    pub vi_hess_residual: Option<f64>,
    /// Eigenvalue range of H_V^{1/2} Ŝ H_V^{1/2}.
    pub sandwich_min: Option<f64>,
    pub sandwich_max: Option<f64>,
    pub vi_outer_iters: Option<usize>,
    #[serde(skip)]
    pub wall_secs: f64,
}

impl ExperimentRecord {
    fn failed(n: usize, replicate: usize, seed: u64, message: String, wall_secs: f64) -> Self {
        ExperimentRecord {
            n,
            replicate,
            seed,
            error: Some(message),
            vi_mean_err: None,
            vi_cov_err: None,
            vi_tv: None,
            lap_mean_err: None,
            lap_cov_err: None,
            lap_tv: None,
            vi_grad_residual: None,
            vi_hess_residual: None,
            sandwich_min: None,
            sandwich_max: None,
            vi_outer_iters: None,
            wall_secs,
        }
    }
}

fn run_cell(config: &BenchConfig, rule: &QuadratureRule, n: usize, replicate: usize) -> ExperimentRecord {
    let started = Instant::now();
    let seed = cell_seed(config, n, replicate);
    let attempt = || -> Result<ExperimentRecord> {
        let data = generate_dataset(config, n, replicate);
        let p = LogisticPotential::new(data)?;
        let lap = laplace_fit(&p)?;
        let spec = GridSpec::from_laplace(&lap, config.grid_sd_multiple, config.grid_points)?;
        let table = GridTable::build(&p, &spec)?;
        let truth = table.moments();
        let (vi, report) = vi_fit_contraction(&p, rule, config.tol, config.max_outer)?;

        let h_total = WeightMatrix::new(p.hess_total(lap.mean()))?;
        let sandwich = h_total.sqrt() * vi.cov() * h_total.sqrt();
        let (s_lo, s_hi) = sym_eig_range(&sandwich);

        let mean_err = |fit: &GaussianApprox| (fit.mean() - &truth.mean).norm();
        let cov_err = |fit: &GaussianApprox| sym_op_norm(&(fit.cov() - &truth.cov));
        Ok(ExperimentRecord {
            n,
            replicate,
            seed,
            error: None,
            vi_mean_err: Some(mean_err(&vi)),
            vi_cov_err: Some(cov_err(&vi)),
            vi_tv: Some(table.tv(&vi)),
            lap_mean_err: Some(mean_err(&lap)),
            lap_cov_err: Some(cov_err(&lap)),
            lap_tv: Some(table.tv(&lap)),
            vi_grad_residual: Some(report.grad_residual),
            vi_hess_residual: Some(report.hess_residual_rel),
            sandwich_min: Some(s_lo),
            sandwich_max: Some(s_hi),
            vi_outer_iters: Some(report.outer_iterations),
            wall_secs: started.elapsed().as_secs_f64(),
        })
    };
    match attempt() {
        Ok(rec) => rec,
        Err(e) => ExperimentRecord::failed(n, replicate, seed, e.to_string(), started.elapsed().as_secs_f64()),
    }
}

/// One summary row: replicate mean and the spread of the middle `band`
/// replicates for a given (n, metric).
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub metric: String,
    pub mean: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Slope fits of the four error series.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeSet {
    pub vi_mean: Option<SlopeFit>,
    pub laplace_mean: Option<SlopeFit>,
    pub vi_cov: Option<SlopeFit>,
    pub laplace_cov: Option<SlopeFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<SummaryRow>,
    pub slopes: SlopeSet,
    pub failed_cells: usize,
    pub wall_secs: f64,
}

const METRICS: [&str; 6] = [
    "vi_mean_err",
    "lap_mean_err",
    "vi_cov_err",
    "lap_cov_err",
    "vi_tv",
    "lap_tv",
];

fn metric_value(rec: &ExperimentRecord, metric: &str) -> Option<f64> {
    match metric {
        "vi_mean_err" => rec.vi_mean_err,
        "lap_mean_err" => rec.lap_mean_err,
        "vi_cov_err" => rec.vi_cov_err,
        "lap_cov_err" => rec.lap_cov_err,
        "vi_tv" => rec.vi_tv,
        "lap_tv" => rec.lap_tv,
        _ => None,
    }
}

fn summarize(config: &BenchConfig, records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &n in &config.n_grid {
        for metric in METRICS {
            let mut values: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && r.error.is_none())
                .filter_map(|r| metric_value(r, metric))
                .collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.sort_by(f64::total_cmp);
            let drop = values.len().saturating_sub(config.band) / 2;
            let kept = &values[drop..values.len() - drop];
            rows.push(SummaryRow {
                n,
                metric: metric.to_string(),
                mean,
                band_lo: kept[0],
                band_hi: kept[kept.len() - 1],
            });
        }
    }
    rows
}

fn series(summary: &[SummaryRow], metric: &str) -> Vec<(f64, f64)> {
    summary
        .iter()
        .filter(|row| row.metric == metric)
        .map(|row| (row.n as f64, row.mean))
        .collect()
}

fn fit_series(summary: &[SummaryRow], metric: &str) -> Option<SlopeFit> {
    fit_loglog_slope(&series(summary, metric)).ok()
}

/// Runs every (n, replicate) cell, in parallel when `jobs != 1`; cells are
/// independent and aggregation is in (n, replicate) order, so results do not
/// depend on the schedule. Aborts when more than 20% of the cells fail.
pub fn run_benchmark(config: &BenchConfig, jobs: usize) -> Result<BenchOutput> {
    config.validate()?;
    let started = Instant::now();
    let rule = QuadratureRule::gauss_hermite(config.d, config.quad_level)?;
    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect();

    let run_all = || -> Vec<ExperimentRecord> {
        cells
            .par_iter()
            .map(|&(n, r)| run_cell(config, &rule, n, r))
            .collect()
    };
    let records = if jobs == 0 {
        run_all()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| GviError::InvalidArgument {
                context: format!("thread pool: {e}"),
            })?
            .install(run_all)
    };

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed * 5 > records.len() {
        return Err(GviError::TooManyFailures {
            failed,
            total: records.len(),
        });
    }
    let summary = summarize(config, &records);
    let slopes = SlopeSet {
        vi_mean: fit_series(&summary, "vi_mean_err"),
        laplace_mean: fit_series(&summary, "lap_mean_err"),
        vi_cov: fit_series(&summary, "vi_cov_err"),
        laplace_cov: fit_series(&summary, "lap_cov_err"),
    };
    Ok(BenchOutput {
        records,
        summary,
        slopes,
        failed_cells: failed,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// records.csv (timings excluded so reruns are byte-identical).
pub fn records_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(
        "n,replicate,seed,status,vi_mean_err,vi_cov_err,vi_tv,lap_mean_err,lap_cov_err,lap_tv,vi_grad_residual,vi_hess_residual,sandwich_min,sandwich_max,vi_outer_iters\n",
    );
    for r in records {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(msg) => format!("failed:{}", msg.replace([',', '\n'], ";")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.replicate,
            r.seed,
            status,
            opt(r.vi_mean_err),
            opt(r.vi_cov_err),
            opt(r.vi_tv),
            opt(r.lap_mean_err),
            opt(r.lap_cov_err),
            opt(r.lap_tv),
            opt(r.vi_grad_residual),
            opt(r.vi_hess_residual),
            opt(r.sandwich_min),
            opt(r.sandwich_max),
            r.vi_outer_iters.map(|v| v.to_string()).unwrap_or_default(),
        );
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = String::from("n,metric,mean,band_lo,band_hi\n");
    for row in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.n, row.metric, row.mean, row.band_lo, row.band_hi
        );
    }
    out
}

fn dat_file(summary: &[SummaryRow], metric: &str) -> String {
    let mut out = String::new();
    for (n, err) in series(summary, metric) {
        if err > 0.0 {
            let _ = writeln!(out, "{} {}", n.log10(), err.log10());
        }
    }
    out
}

/// Writes records.csv, summary.csv, slopes.json, per-series .dat files, and
/// a run manifest into `dir`.
pub fn emit_outputs(output: &BenchOutput, config: &BenchConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("records.csv"), records_csv(&output.records))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&output.summary))?;
    std::fs::write(
        dir.join("slopes.json"),
        serde_json::to_string_pretty(&output.slopes)?,
    )?;
    for (metric, file) in [
        ("vi_mean_err", "vi_mean.dat"),
        ("lap_mean_err", "laplace_mean.dat"),
        ("vi_cov_err", "vi_cov.dat"),
        ("lap_cov_err", "laplace_cov.dat"),
    ] {
        std::fs::write(dir.join(file), dat_file(&output.summary, metric))?;
    }
    let manifest = serde_json::json!({
        "config": config,
        "failed_cells": output.failed_cells,
        "records": output.records.len(),
        "wall_secs": output.wall_secs,
        "version": env!("CARGO_PKG_VERSION"),
    });
    std::fs::write(
        dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}
