//! Measured approximation-error diagnostics: fit-vs-oracle error metrics,
//! correction-adjusted integrals, derivative-growth rate predictions, the
//! integrand growth condition, and log-log slope fits.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::fit::{GaussianApprox, SolveReport};
use crate::hermite::CorrectionPolynomial;
use crate::oracle::{gaussian_expectation_g, GridTable};
use crate::potential::{AssumptionConstants, Potential};
use crate::quadrature::QuadratureRule;
use crate::util::{standard_normal_vector, sym_eig_range, sym_op_norm};

/// Test integrands, centered where relevant on the fit mean so that the
/// even/linear error classes are meaningful per fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GFunction {
    /// x_i (linear class).
    Coordinate { axis: usize },
    /// (x_i - m̂_i)² (even about the fit mean).
    CenteredSquare { axis: usize },
    /// 1{normal·(x - m̂) >= 0} (bounded, generic class).
    HalfSpace { normal: Vec<f64> },
    /// (x_i - m̂_i)³ (odd about the fit mean, not linear).
    CenteredCube { axis: usize },
}

impl GFunction {
    pub fn name(&self) -> String {
        match self {
            GFunction::Coordinate { axis } => format!("coordinate_{axis}"),
            GFunction::CenteredSquare { axis } => format!("centered_square_{axis}"),
            GFunction::HalfSpace { .. } => "half_space".to_string(),
            GFunction::CenteredCube { axis } => format!("centered_cube_{axis}"),
        }
    }

    pub fn eval(&self, x: &DVector<f64>, center: &DVector<f64>) -> f64 {
        match self {
            GFunction::Coordinate { axis } => x[*axis],
            GFunction::CenteredSquare { axis } => (x[*axis] - center[*axis]).powi(2),
            GFunction::HalfSpace { normal } => {
                let s: f64 = normal
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * (x[i] - center[i]))
                    .sum();
                f64::from(u8::from(s >= 0.0))
            }
            GFunction::CenteredCube { axis } => (x[*axis] - center[*axis]).powi(3),
        }
    }
}

/// Default suite: the coordinates, their centered squares, one half-space,
/// one centered cube — spanning the linear, even, and generic error classes.
pub fn default_g_suite(dim: usize) -> Vec<GFunction> {
    let mut suite = Vec::new();
    for axis in 0..dim {
        suite.push(GFunction::Coordinate { axis });
    }
    for axis in 0..dim {
        suite.push(GFunction::CenteredSquare { axis });
    }
    let mut normal = vec![0.0; dim];
    normal[0] = 1.0;
    suite.push(GFunction::HalfSpace { normal });
    suite.push(GFunction::CenteredCube { axis: 0 });
    suite
}

/// Per-integrand error row.
#[derive(Debug, Clone, Serialize)]
pub struct GErrorRow {
    pub name: String,
    /// |∫g dπ − ∫g dπ̂|.
    pub raw_error: f64,
    /// |∫g dπ − ∫g dπ̂ − ∫gQ dπ̂| (VI fits only).
    pub corrected_error: Option<f64>,
    /// Var_π̂(g)^{1/2}, the prefactor the error bounds scale with.
    pub var_prefactor: f64,
}

/// Error metrics of one Gaussian fit against the grid ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct MethodErrorReport {
    pub method: String,
    /// sqrt(n)·|m̂ − m̄|.
    pub mean_error_scaled: Option<f64>,
    /// |S^{-1/2}(m̄ − m̂)|.
    pub mean_error_weighted: Option<f64>,
    /// n·|Ŝ − Σ| in operator norm.
    pub cov_error_scaled: Option<f64>,
    /// |S^{-1/2}(Σ − Ŝ)S^{-1/2}|.
    pub cov_error_weighted: Option<f64>,
    pub tv: Option<f64>,
    pub g_errors: Vec<GErrorRow>,
    /// (whitened grad residual, raw grad residual, relative Hessian
    /// residual) when a solve report was supplied.
    pub stationarity: Option<(f64, f64, f64)>,
}

/// Paired VI/Laplace error report for one potential.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub label: String,
    pub d: usize,
    pub n: f64,
    /// ε = d/sqrt(n), the small parameter of every rate.
    pub eps: f64,
    /// False when no grid oracle is available (d above the oracle cap);
    /// oracle-based columns are then absent.
    pub oracle_available: bool,
    pub vi: MethodErrorReport,
    pub laplace: MethodErrorReport,
}

fn method_report(
    p: &(impl Potential + ?Sized + Sync),
    approx: &GaussianApprox,
    solve: Option<&SolveReport>,
    table: Option<&GridTable>,
    rule: &QuadratureRule,
    suite: &[GFunction],
    correction: Option<&CorrectionPolynomial>,
) -> Result<MethodErrorReport> {
    let n = p.sample_size();
    let method = match approx.method() {
        crate::fit::FitMethod::ViContraction => "vi_contraction",
        crate::fit::FitMethod::ViFixedPoint => "vi_fixed_point",
        crate::fit::FitMethod::Laplace => "laplace",
    }
    .to_string();

    let mut report = MethodErrorReport {
        method,
        mean_error_scaled: None,
        mean_error_weighted: None,
        cov_error_scaled: None,
        cov_error_weighted: None,
        tv: None,
        g_errors: Vec::new(),
        stationarity: solve.map(|s| (s.grad_residual, s.grad_residual_raw, s.hess_residual_rel)),
    };

    let Some(table) = table else {
        return Ok(report);
    };

    let moments = table.moments();
    let delta = &moments.mean - approx.mean();
    report.mean_error_scaled = Some(n.sqrt() * delta.norm());
    report.mean_error_weighted = Some((approx.cov_inv_sqrt() * &delta).norm());
    let cov_delta = &moments.cov - approx.cov();
    report.cov_error_scaled = Some(n * sym_op_norm(&cov_delta));
    report.cov_error_weighted = Some(sym_op_norm(
        &(approx.cov_inv_sqrt() * &cov_delta * approx.cov_inv_sqrt()),
    ));
    report.tv = Some(table.tv(approx));

    let center = approx.mean().clone();
    for g in suite {
        let truth = table.integrate(|x| g.eval(x, &center));
        let fitted = gaussian_expectation_g(approx, rule, |x| g.eval(x, &center))?;
        let raw_error = (truth - fitted).abs();
        let corrected_error = match correction {
            Some(q) => {
                let q_int =
                    gaussian_expectation_g(approx, rule, |x| g.eval(x, &center) * q.eval(x))?;
                Some((truth - fitted - q_int).abs())
            }
            None => None,
        };
        let second = gaussian_expectation_g(approx, rule, |x| g.eval(x, &center).powi(2))?;
        let var_prefactor = (second - fitted * fitted).max(0.0).sqrt();
        report.g_errors.push(GErrorRow {
            name: g.name(),
            raw_error,
            corrected_error,
            var_prefactor,
        });
    }
    Ok(report)
}

/// Full error report of a VI and a Laplace fit against the grid oracle
/// (`table = None` marks the oracle unavailable and yields a partial
/// report).
pub fn error_report(
    p: &(impl Potential + ?Sized + Sync),
    vi: &GaussianApprox,
    vi_solve: Option<&SolveReport>,
    laplace: &GaussianApprox,
    table: Option<&GridTable>,
    rule: &QuadratureRule,
    suite: &[GFunction],
) -> Result<ErrorReport> {
    let d = p.dim();
    let n = p.sample_size();
    let correction = match table {
        Some(_) => Some(CorrectionPolynomial::build(p, vi, rule)?),
        None => None,
    };
    Ok(ErrorReport {
        label: p.label(),
        d,
        n,
        eps: d as f64 / n.sqrt(),
        oracle_available: table.is_some(),
        vi: method_report(p, vi, vi_solve, table, rule, suite, correction.as_ref())?,
        laplace: method_report(p, laplace, None, table, rule, suite, None)?,
    })
}

impl ErrorReport {
    /// Rows `(label, d, n, replicate, method, metric, value)`.
    pub fn csv_rows(&self, replicate: usize) -> Vec<String> {
        let mut rows = Vec::new();
        for m in [&self.vi, &self.laplace] {
            let mut push = |metric: &str, value: f64| {
                rows.push(format!(
                    "{},{},{},{},{},{},{}",
                    self.label, self.d, self.n, replicate, m.method, metric, value
                ));
            };
            push("eps", self.eps);
            push("oracle_available", f64::from(u8::from(self.oracle_available)));
            if let Some(v) = m.mean_error_scaled {
                push("mean_error_scaled", v);
            }
            if let Some(v) = m.mean_error_weighted {
                push("mean_error_weighted", v);
            }
            if let Some(v) = m.cov_error_scaled {
                push("cov_error_scaled", v);
            }
            if let Some(v) = m.cov_error_weighted {
                push("cov_error_weighted", v);
            }
            if let Some(v) = m.tv {
                push("tv", v);
            }
            if let Some((w, raw, hess)) = m.stationarity {
                push("stationarity_grad", w);
                push("stationarity_grad_raw", raw);
                push("stationarity_hess_rel", hess);
            }
            for row in &m.g_errors {
                push(&format!("g_raw:{}", row.name), row.raw_error);
                if let Some(c) = row.corrected_error {
                    push(&format!("g_corrected:{}", row.name), c);
                }
                push(&format!("g_var_prefactor:{}", row.name), row.var_prefactor);
            }
        }
        rows
    }

    pub const CSV_HEADER: &'static str = "label,d,n,replicate,method,metric,value";
}

/// The three error-class rates implied by the growth constants, with the
/// suppressed prefactors left out (only exponents are testable).
#[derive(Debug, Clone, Serialize)]
pub struct RatePrediction {
    pub eps: f64,
    /// a3·ε + a4·ε².
    pub general: f64,
    /// (a3² + a4)·ε².
    pub even: f64,
    /// (a3³ + a3·a4)·ε³ + a4²·ε⁴.
    pub linear: f64,
}

pub fn rate_prediction(consts: &AssumptionConstants, d: usize, n: f64) -> RatePrediction {
    let eps = d as f64 / n.sqrt();
    let (a3, a4) = (consts.a3, consts.a4);
    RatePrediction {
        eps,
        general: a3 * eps + a4 * eps * eps,
        even: (a3 * a3 + a4) * eps * eps,
        linear: (a3.powi(3) + a3 * a4) * eps.powi(3) + a4 * a4 * eps.powi(4),
    }
}

/// Outcome of sampling the integrand growth condition
/// `|g(x) − ∫g dπ̂| <= exp(c0·sqrt(d)·|x − m̂|_{S^{-1}}/4)` on the shell
/// `|x − m̂|_{S^{-1}} >= R_g·sqrt(d)`.
#[derive(Debug, Clone, Serialize)]
pub struct GConditionReport {
    pub passed: bool,
    pub checked: usize,
    /// First violating probe, when any.
    pub witness: Option<Vec<f64>>,
}

pub fn check_g_condition(
    g: impl Fn(&DVector<f64>) -> f64,
    approx: &GaussianApprox,
    c0: f64,
    r_g: f64,
    probes: usize,
    seed: u64,
    rule: &QuadratureRule,
) -> Result<GConditionReport> {
    let d = approx.dim();
    let g_bar = gaussian_expectation_g(approx, rule, &g)?;
    let sqrt_d = (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..probes {
        let u = standard_normal_vector(d, &mut rng);
        let norm = u.norm();
        if norm < 1e-12 {
            continue;
        }
        let radius = (r_g + 8.0 * rng.random::<f64>()) * sqrt_d;
        let z = u * (radius / norm);
        let x = approx.unwhiten(&z);
        let bound = (c0 * sqrt_d * radius / 4.0).exp();
        if (g(&x) - g_bar).abs() > bound {
            return Ok(GConditionReport {
                passed: false,
                checked: i + 1,
                witness: Some(x.iter().copied().collect()),
            });
        }
    }
    Ok(GConditionReport {
        passed: true,
        checked: probes,
        witness: None,
    })
}

/// Ordinary least squares on (log n, log error).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub used: usize,
    /// Non-positive errors dropped before fitting.
    pub dropped: usize,
}

pub fn fit_loglog_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    let clean: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(n, e)| *n > 0.0 && *e > 0.0)
        .map(|&(n, e)| (n.ln(), e.ln()))
        .collect();
    let dropped = pairs.len() - clean.len();
    if clean.len() < 3 {
        return Err(GviError::TooFewPoints {
            remaining: clean.len(),
        });
    }
    let m = clean.len() as f64;
    let sx: f64 = clean.iter().map(|p| p.0).sum();
    let sy: f64 = clean.iter().map(|p| p.1).sum();
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = clean.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = clean.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(GviError::InvalidArgument {
            context: "slope fit needs at least two distinct n values".to_string(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = clean
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = clean.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        used: clean.len(),
        dropped,
    })
}

/// `|S^{-1/2}(m̄ − m̂)| <= λ_min(S)^{-1/2} |m̄ − m̂|`, the comparison between
/// the weighted and unweighted mean errors.
pub fn weighted_mean_error_bound(approx: &GaussianApprox) -> f64 {
    sym_eig_range(approx.cov()).0.powf(-0.5)
}
