//! The target-measure abstraction π ∝ e^{-n·v} with derivatives to order 4,
//! built-in families, mode finding, whitening rescalings, and estimation of
//! the derivative-growth constants.

mod config;
mod families;

pub use config::PotentialConfig;
pub use families::{
    log1p_exp, sigmoid, GaussianPotential, LogisticPosteriorSpec, LogisticPotential,
    PolynomialPotential,
};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::fit::GaussianApprox;
use crate::tensor::{SymTensor, WeightMatrix};
use crate::util::{standard_normal_vector, sym_eig_range};

/// A potential v with sample size n, defining the target π ∝ e^{-n·v}.
///
/// Implementations supply v and its derivatives through order 3 (order 4
/// optionally); evaluators must be pure so quadrature may run them from any
/// thread. The `*_total` methods give the full potential V = n·v.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// Sample size n >= 1 (real-valued allowed).
    fn sample_size(&self) -> f64;

    fn label(&self) -> String;

    fn v(&self, x: &DVector<f64>) -> f64;

    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64>;

    fn hess_v(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn third_v(&self, x: &DVector<f64>) -> SymTensor;

    fn fourth_v(&self, x: &DVector<f64>) -> Option<SymTensor>;

    /// V(x) = n·v(x).
    fn total(&self, x: &DVector<f64>) -> f64 {
        self.sample_size() * self.v(x)
    }

    fn grad_total(&self, x: &DVector<f64>) -> DVector<f64> {
        self.grad_v(x) * self.sample_size()
    }

    fn hess_total(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.hess_v(x) * self.sample_size()
    }

    fn third_total(&self, x: &DVector<f64>) -> SymTensor {
        self.third_v(x).scale(self.sample_size())
    }

    fn fourth_total(&self, x: &DVector<f64>) -> Option<SymTensor> {
        self.fourth_v(x).map(|t| t.scale(self.sample_size()))
    }
}

impl<'a, P: Potential + ?Sized> Potential for &'a P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn sample_size(&self) -> f64 {
        (**self).sample_size()
    }
    fn label(&self) -> String {
        (**self).label()
    }
    fn v(&self, x: &DVector<f64>) -> f64 {
        (**self).v(x)
    }
    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).grad_v(x)
    }
    fn hess_v(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).hess_v(x)
    }
    fn third_v(&self, x: &DVector<f64>) -> SymTensor {
        (**self).third_v(x)
    }
    fn fourth_v(&self, x: &DVector<f64>) -> Option<SymTensor> {
        (**self).fourth_v(x)
    }
}

impl Potential for Box<dyn Potential> {
    fn dim(&self) -> usize {
        self.as_ref().dim()
    }
    fn sample_size(&self) -> f64 {
        self.as_ref().sample_size()
    }
    fn label(&self) -> String {
        self.as_ref().label()
    }
    fn v(&self, x: &DVector<f64>) -> f64 {
        self.as_ref().v(x)
    }
    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        self.as_ref().grad_v(x)
    }
    fn hess_v(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.as_ref().hess_v(x)
    }
    fn third_v(&self, x: &DVector<f64>) -> SymTensor {
        self.as_ref().third_v(x)
    }
    fn fourth_v(&self, x: &DVector<f64>) -> Option<SymTensor> {
        self.as_ref().fourth_v(x)
    }
}

/// Finds the minimizer of v by damped Newton with Armijo backtracking,
/// falling back to a gradient step whenever the Hessian is not positive
/// definite. Converged when `|grad v| <= 1e-10 · max(1, |grad v(start)|)`.
/// Returns the mode and `H_v = hess v(mode)`, asserted SPD.
pub fn find_mode(
    p: &(impl Potential + ?Sized),
    start: &DVector<f64>,
) -> Result<(DVector<f64>, WeightMatrix)> {
    const MAX_ITER: usize = 200;
    const ARMIJO: f64 = 1e-4;
    let mut x = start.clone();
    let mut g = p.grad_v(&x);
    let tol = 1e-10 * g.norm().max(1.0);
    for _ in 0..MAX_ITER {
        if g.norm() <= tol {
            let h = p.hess_v(&x);
            let w = WeightMatrix::new(h.clone()).map_err(|_| GviError::IndefiniteHessian {
                min_eig: sym_eig_range(&h).0,
            })?;
            return Ok((x, w));
        }
        let h = p.hess_v(&x);
        let mut dir = match Cholesky::new(h) {
            Some(ch) => -ch.solve(&g),
            None => -&g,
        };
        if g.dot(&dir) >= 0.0 {
            dir = -&g;
        }
        let slope = g.dot(&dir);
        let v0 = p.v(&x);
        // inside the quadratic basin the Armijo decrease falls below the
        // rounding noise of v; take the plain Newton step there
        if -slope <= 2.0 * f64::EPSILON * v0.abs().max(1.0) {
            x += dir;
            g = p.grad_v(&x);
            continue;
        }
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let vc = p.v(&cand);
            if vc.is_finite() && vc <= v0 + ARMIJO * step * slope {
                x = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            return Err(GviError::ModeNotConverged {
                max_iter: MAX_ITER,
                residual: g.norm(),
            });
        }
        g = p.grad_v(&x);
    }
    Err(GviError::ModeNotConverged {
        max_iter: MAX_ITER,
        residual: g.norm(),
    })
}

/// Potential obtained by composing a base potential's *full* V = n·v with an
/// affine map `x -> offset + lin·x`. The result carries sample size 1, so its
/// `v` equals the composed V; derivative tensors contract each slot with
/// `lin`.
pub struct AffinePullback<P: Potential> {
    base: P,
    offset: DVector<f64>,
    lin: DMatrix<f64>,
    label: String,
}

impl<P: Potential> AffinePullback<P> {
    pub fn new(base: P, offset: DVector<f64>, lin: DMatrix<f64>) -> Result<Self> {
        let d = base.dim();
        if offset.len() != d || lin.nrows() != d || lin.ncols() != d {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "affine map shapes ({}, {}x{}) do not match dim {}",
                    offset.len(),
                    lin.nrows(),
                    lin.ncols(),
                    d
                ),
            });
        }
        let label = format!("{}|affine", base.label());
        Ok(AffinePullback {
            base,
            offset,
            lin,
            label,
        })
    }

    fn map(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.lin * x
    }
}

impl<P: Potential> Potential for AffinePullback<P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn sample_size(&self) -> f64 {
        1.0
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn v(&self, x: &DVector<f64>) -> f64 {
        self.base.total(&self.map(x))
    }

    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        self.lin.transpose() * self.base.grad_total(&self.map(x))
    }

    fn hess_v(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let h = self.base.hess_total(&self.map(x));
        self.lin.transpose() * h * &self.lin
    }

    fn third_v(&self, x: &DVector<f64>) -> SymTensor {
        self.base
            .third_total(&self.map(x))
            .congruence(&self.lin)
            .expect("dimension checked at construction")
    }

    fn fourth_v(&self, x: &DVector<f64>) -> Option<SymTensor> {
        self.base.fourth_total(&self.map(x)).map(|t| {
            t.congruence(&self.lin)
                .expect("dimension checked at construction")
        })
    }
}

/// Mode-whitening rescaling `W(x) = V(m* + H_V^{-1/2} x)` for `H_V = n·hess
/// v(m*)`: recenters the minimum at zero with unit Hessian there.
pub fn rescale_to_w<P: Potential>(
    p: P,
    mode: &DVector<f64>,
    h_total: &WeightMatrix,
) -> Result<AffinePullback<P>> {
    AffinePullback::new(p, mode.clone(), h_total.inv_sqrt().clone())
}

/// Fit-whitening rescaling `V0(x) = V(m̂ + S^{1/2} x)`; at the canonical VI
/// solution E[grad V0(Z)] = 0 and E[hess V0(Z)] = I.
pub fn rescale_to_v0<P: Potential>(p: P, approx: &GaussianApprox) -> Result<AffinePullback<P>> {
    AffinePullback::new(p, approx.mean().clone(), approx.cov_sqrt().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Estimated,
}

/// The derivative-growth and lower-growth constants (a3, a4, q, c0) of a
/// potential, estimated on a probe shell around the mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub a3: f64,
    pub a4: f64,
    pub q: f64,
    pub c0: f64,
    pub c0_provenance: Provenance,
    /// a3·d/sqrt(n) + a4·d²/n; its first companion condition involves an
    /// unspecified constant and is reported as not checkable.
    pub growth_sum: f64,
    /// Whether growth_sum <= 1 (surfaced as a warning threshold, not
    /// enforced).
    pub growth_ok: bool,
}

#[derive(Debug, Clone)]
pub struct ConstantsConfig {
    /// Polynomial growth exponent supplied by the caller.
    pub q: f64,
    /// Outer shell radius in multiples of sqrt(d/n).
    pub radius_multiple: f64,
    pub samples: usize,
    pub seed: u64,
    /// When asserted, c0 = 1/8 analytically (convex case).
    pub assume_convex: bool,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            q: 0.0,
            radius_multiple: 20.0,
            samples: 1000,
            seed: 0,
            assume_convex: false,
        }
    }
}

/// Estimates a3, a4 as the max over probes of
/// `|∇^k v(x)|_{H_v} / (1 ∨ sqrt(n/d)·|x-m*|_{H_v})^q`, and c0 as the min
/// over the probe shell of `(v(x) - v(m*)) / (sqrt(d/n)·|x-m*|_{H_v})`
/// unless convexity is asserted.
pub fn estimate_assumption_constants(
    p: &(impl Potential + ?Sized),
    mode: &DVector<f64>,
    h_v: &WeightMatrix,
    cfg: &ConstantsConfig,
) -> Result<AssumptionConstants> {
    if cfg.samples == 0 {
        return Err(GviError::EmptyProbeSet);
    }
    let d = p.dim();
    let n = p.sample_size();
    let scale = (d as f64 / n).sqrt();
    let r_lo = 0.5 * scale;
    let r_hi = cfg.radius_multiple * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let weighted = |t: &SymTensor| t.op_norm(Some(h_v));
    let mut a3 = weighted(&p.third_v(mode));
    let mut a4 = p.fourth_v(mode).map(|t| weighted(&t)).unwrap_or(0.0);
    let v_mode = p.v(mode);
    let mut c0_est = f64::INFINITY;

    for _ in 0..cfg.samples {
        let u = standard_normal_vector(d, &mut rng);
        let norm = u.norm();
        if norm < 1e-12 {
            continue;
        }
        let dir: DVector<f64> = h_v.inv_sqrt() * (u / norm);
        let r = r_lo + (r_hi - r_lo) * rng.random::<f64>();
        let x: DVector<f64> = mode + dir * r;
        let denom = (1.0f64).max((n / d as f64).sqrt() * r).powf(cfg.q);
        a3 = a3.max(weighted(&p.third_v(&x)) / denom);
        if let Some(t4) = p.fourth_v(&x) {
            a4 = a4.max(weighted(&t4) / denom);
        }
        let growth = (p.v(&x) - v_mode) / (scale * r);
        c0_est = c0_est.min(growth);
    }

    let (c0, c0_provenance) = if cfg.assume_convex {
        (0.125, Provenance::Analytic)
    } else {
        (c0_est, Provenance::Estimated)
    };
    let growth_sum = a3 * d as f64 / n.sqrt() + a4 * (d * d) as f64 / n;
    Ok(AssumptionConstants {
        a3,
        a4,
        q: cfg.q,
        c0,
        c0_provenance,
        growth_sum,
        growth_ok: growth_sum <= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureRule;
    use approx::assert_abs_diff_eq;
    use families::{GaussianPotential, LogisticPosteriorSpec, LogisticPotential, PolynomialPotential};
    use rand_distr::Distribution;

    pub(crate) fn logistic_fixture(d: usize, rows: usize, seed: u64) -> LogisticPotential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = DMatrix::from_fn(rows, d, |_, _| {
            let x: f64 = rand_distr::StandardNormal.sample(&mut rng);
            x
        });
        let theta0 = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let labels = (0..rows)
            .map(|i| {
                let t: f64 = (0..d).map(|j| features[(i, j)] * theta0[j]).sum();
                u8::from(rng.random::<f64>() < families::sigmoid(t))
            })
            .collect();
        LogisticPotential::new(LogisticPosteriorSpec {
            features,
            labels,
            prior_precision: None,
        })
        .unwrap()
    }

    #[test]
    fn mode_of_gaussian_is_the_mean() {
        let mean = DVector::from_vec(vec![2.0, -3.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let p = GaussianPotential::new(mean.clone(), cov, 5.0).unwrap();
        for start in [DVector::zeros(2), DVector::from_vec(vec![10.0, 10.0])] {
            let (mode, _) = find_mode(&p, &start).unwrap();
            assert!((mode - &mean).norm() <= 1e-10);
        }
    }

    #[test]
    fn mode_of_even_quartic_is_zero() {
        let p = PolynomialPotential::univariate(1.0, 0.0, 6.0, 1.0).unwrap();
        let (mode, h) = find_mode(&p, &DVector::from_vec(vec![1.7])).unwrap();
        assert_abs_diff_eq!(mode[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(h.matrix()[(0, 0)], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn logistic_mode_matches_grid_argmin() {
        let p = logistic_fixture(2, 60, 7);
        let (mode, _) = find_mode(&p, &DVector::zeros(2)).unwrap();
        // dense grid argmin of v over a box around the mode estimate
        let half = 0.8;
        let steps = 161;
        let mut best = (f64::INFINITY, DVector::zeros(2));
        for i in 0..steps {
            for j in 0..steps {
                let x = DVector::from_vec(vec![
                    mode[0] - half + 2.0 * half * i as f64 / (steps - 1) as f64,
                    mode[1] - half + 2.0 * half * j as f64 / (steps - 1) as f64,
                ]);
                let v = p.v(&x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        let spacing = 2.0 * half / (steps - 1) as f64;
        assert!((best.1 - &mode).norm() <= spacing * 1.5);
    }

    #[test]
    fn mode_finder_reports_saddle() {
        // v(x) = x1²/2 − x2²/2 has an indefinite Hessian at its critical point
        struct Saddle;
        impl Potential for Saddle {
            fn dim(&self) -> usize {
                2
            }
            fn sample_size(&self) -> f64 {
                1.0
            }
            fn label(&self) -> String {
                "saddle".into()
            }
            fn v(&self, x: &DVector<f64>) -> f64 {
                0.5 * (x[0] * x[0] - x[1] * x[1])
            }
            fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![x[0], -x[1]])
            }
            fn hess_v(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))
            }
            fn third_v(&self, _x: &DVector<f64>) -> SymTensor {
                SymTensor::zeros(3, 2).unwrap()
            }
            fn fourth_v(&self, _x: &DVector<f64>) -> Option<SymTensor> {
                None
            }
        }
        let err = find_mode(&Saddle, &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, GviError::IndefiniteHessian { .. }));
    }

    #[test]
    fn whitened_gaussian_is_standard_quadratic() {
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.25]);
        let p = GaussianPotential::new(mean.clone(), cov, 8.0).unwrap();
        let (mode, h_v) = find_mode(&p, &DVector::zeros(2)).unwrap();
        let h_total = WeightMatrix::new(h_v.matrix() * p.sample_size()).unwrap();
        let w = rescale_to_w(&p, &mode, &h_total).unwrap();
        let x = DVector::from_vec(vec![0.6, -1.1]);
        assert_abs_diff_eq!(
            w.v(&x) - w.v(&DVector::zeros(2)),
            0.5 * x.norm_squared(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn whitened_hessian_is_identity_at_origin() {
        let p = logistic_fixture(2, 80, 3);
        let (mode, h_v) = find_mode(&p, &DVector::zeros(2)).unwrap();
        let h_total = WeightMatrix::new(h_v.matrix() * p.sample_size()).unwrap();
        let w = rescale_to_w(&p, &mode, &h_total).unwrap();
        let zero = DVector::zeros(2);
        assert!(w.grad_v(&zero).norm() <= 1e-7);
        assert!((w.hess_v(&zero) - DMatrix::identity(2, 2)).norm() <= 1e-8);
    }

    #[test]
    fn whitened_cubic_third_derivative_follows_chain_rule() {
        // W'''(0) = v'''(0) · n^{-1/2} · v''(0)^{-3/2}
        let n = 50.0;
        let p = PolynomialPotential::univariate(1.0, 0.6, 0.0, n).unwrap();
        let (mode, h_v) = find_mode(&p, &DVector::zeros(1)).unwrap();
        let h_total = WeightMatrix::new(h_v.matrix() * n).unwrap();
        let w = rescale_to_w(&p, &mode, &h_total).unwrap();
        let expected = 0.6 / n.sqrt();
        assert_abs_diff_eq!(
            w.third_v(&DVector::zeros(1)).entries()[0],
            expected,
            epsilon = 1e-10
        );
    }

    #[test]
    fn rescaling_twice_is_idempotent_up_to_constant() {
        let p = logistic_fixture(2, 50, 9);
        let (mode, h_v) = find_mode(&p, &DVector::zeros(2)).unwrap();
        let h_total = WeightMatrix::new(h_v.matrix() * p.sample_size()).unwrap();
        let w = rescale_to_w(&p, &mode, &h_total).unwrap();
        let (mode2, h2) = find_mode(&w, &DVector::zeros(2)).unwrap();
        let h2_total = WeightMatrix::new(h2.matrix().clone()).unwrap();
        let ww = rescale_to_w(&w, &mode2, &h2_total).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = ww.v(&DVector::zeros(2)) - w.v(&DVector::zeros(2));
        for _ in 0..10 {
            let x = DVector::from_fn(2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            assert_abs_diff_eq!(ww.v(&x) - w.v(&x), c, epsilon = 1e-7);
        }
    }

    #[test]
    fn gaussian_growth_constants_vanish() {
        let p = GaussianPotential::new(DVector::zeros(2), DMatrix::identity(2, 2), 9.0).unwrap();
        let (mode, h_v) = find_mode(&p, &DVector::zeros(2)).unwrap();
        let consts =
            estimate_assumption_constants(&p, &mode, &h_v, &ConstantsConfig::default()).unwrap();
        assert_abs_diff_eq!(consts.a3, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(consts.a4, 0.0, epsilon = 1e-12);
        assert!(consts.growth_ok);
    }

    #[test]
    fn quartic_fourth_growth_constant_is_exact() {
        // ∇⁴v ≡ 6 and H_v = 1, so with q = 0 the estimate is exactly 6
        let n = 20.0;
        let p = PolynomialPotential::univariate(1.0, 0.0, 6.0, n).unwrap();
        let (mode, h_v) = find_mode(&p, &DVector::zeros(1)).unwrap();
        let cfg = ConstantsConfig {
            samples: 1000,
            ..ConstantsConfig::default()
        };
        let consts = estimate_assumption_constants(&p, &mode, &h_v, &cfg).unwrap();
        assert_abs_diff_eq!(consts.a4, 6.0, epsilon = 1e-8);
        assert!(consts.c0 > 0.0);
        assert!(matches!(consts.c0_provenance, Provenance::Estimated));
    }

    #[test]
    fn logistic_third_constant_respects_spectral_bound() {
        // |T|_H <= λ_min(H)^{-3/2} |T| for an order-3 tensor
        let p = logistic_fixture(2, 60, 21);
        let (mode, h_v) = find_mode(&p, &DVector::zeros(2)).unwrap();
        let cfg = ConstantsConfig {
            samples: 1000,
            seed: 2,
            ..ConstantsConfig::default()
        };
        let consts = estimate_assumption_constants(&p, &mode, &h_v, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scale = (2.0 / p.sample_size()).sqrt();
        let mut max_unweighted: f64 = p.third_v(&mode).op_norm(None);
        for _ in 0..1000 {
            let u = crate::util::standard_normal_vector(2, &mut rng);
            let r = 20.0 * scale * rng.random::<f64>();
            let x = &mode + h_v.inv_sqrt() * u.normalize() * r;
            max_unweighted = max_unweighted.max(p.third_v(&x).op_norm(None));
        }
        let bound = h_v.min_eigenvalue().powf(-1.5) * max_unweighted;
        assert!(
            consts.a3 <= bound * (1.0 + 1e-9),
            "a3 = {} exceeds spectral bound {}",
            consts.a3,
            bound
        );
    }

    #[test]
    fn convexity_assertion_pins_lower_growth_constant() {
        let p = logistic_fixture(2, 40, 30);
        let (mode, h_v) = find_mode(&p, &DVector::zeros(2)).unwrap();
        let cfg = ConstantsConfig {
            assume_convex: true,
            samples: 50,
            ..ConstantsConfig::default()
        };
        let consts = estimate_assumption_constants(&p, &mode, &h_v, &cfg).unwrap();
        assert_eq!(consts.c0, 0.125);
        assert!(matches!(consts.c0_provenance, Provenance::Analytic));
    }

    #[test]
    fn empty_probe_set_is_an_error() {
        let p = GaussianPotential::new(DVector::zeros(1), DMatrix::identity(1, 1), 1.0).unwrap();
        let (mode, h_v) = find_mode(&p, &DVector::zeros(1)).unwrap();
        let cfg = ConstantsConfig {
            samples: 0,
            ..ConstantsConfig::default()
        };
        assert!(matches!(
            estimate_assumption_constants(&p, &mode, &h_v, &cfg),
            Err(GviError::EmptyProbeSet)
        ));
    }

    #[test]
    fn v0_rescaling_satisfies_first_two_moment_equations() {
        use crate::fit::vi_fit_contraction;
        let p = logistic_fixture(2, 60, 55);
        let rule = QuadratureRule::gauss_hermite(2, 20).unwrap();
        let (approx, _) = vi_fit_contraction(&p, &rule, 1e-10, 100).unwrap();
        let v0 = rescale_to_v0(&p, &approx).unwrap();
        let a1 = rule.expect_vector(2, |z| v0.grad_v(z)).unwrap();
        let a2 = rule.expect_matrix(2, 2, |z| v0.hess_v(z)).unwrap();
        assert!(a1.norm() <= 1e-8, "E[grad V0] = {a1:?}");
        assert!((a2 - DMatrix::identity(2, 2)).norm() <= 1e-8);
    }
}
