//! Built-in potential families: Gaussian (exactness baseline), polynomial
//! test potentials, and the logistic-regression posterior.

use nalgebra::{DMatrix, DVector};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use super::Potential;
use crate::error::{GviError, Result};
use crate::tensor::SymTensor;
use crate::util::{spd_spectral_map, standard_normal_vector, sym_eig_range};

/// Gaussian potential `v(x) = (x-μ)ᵀ C⁻¹ (x-μ) / (2n)`, so that
/// π ∝ e^{-n·v} is exactly N(μ, C). Third and fourth derivatives vanish.
#[derive(Debug)]
pub struct GaussianPotential {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    n: f64,
}

impl GaussianPotential {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: f64) -> Result<Self> {
        check_sample_size(n)?;
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "covariance is {}x{}, mean has length {}",
                    cov.nrows(),
                    cov.ncols(),
                    mean.len()
                ),
            });
        }
        let cov_inv = spd_spectral_map(&cov, "gaussian covariance", |x| 1.0 / x)?;
        Ok(GaussianPotential {
            mean,
            cov,
            cov_inv,
            n,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_size(&self) -> f64 {
        self.n
    }

    fn label(&self) -> String {
        format!("gaussian(d={})", self.dim())
    }

    fn v(&self, x: &DVector<f64>) -> f64 {
        let delta = x - &self.mean;
        0.5 * delta.dot(&(&self.cov_inv * &delta)) / self.n
    }

    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.cov_inv * (x - &self.mean)) / self.n
    }

    fn hess_v(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        &self.cov_inv / self.n
    }

    fn third_v(&self, _x: &DVector<f64>) -> SymTensor {
        SymTensor::zeros(3, self.dim()).expect("order 3 valid")
    }

    fn fourth_v(&self, _x: &DVector<f64>) -> Option<SymTensor> {
        Some(SymTensor::zeros(4, self.dim()).expect("order 4 valid"))
    }
}

/// Polynomial potential `v(x) = xᵀAx/2 + <T3, x^⊗3>/6 + <T4, x^⊗4>/24` with
/// analytic derivatives of all orders.
///
/// A nonzero quartic part is probed for unboundedness along random rays. The
/// pure cubic family (T4 = 0) is accepted as-is: it is unbounded below
/// globally and is meant to be used on a bounded box carrying all but a
/// negligible fraction of the mass.
#[derive(Debug)]
pub struct PolynomialPotential {
    quad: DMatrix<f64>,
    t3: SymTensor,
    t4: SymTensor,
    n: f64,
}

impl PolynomialPotential {
    pub fn new(
        quad: DMatrix<f64>,
        t3: Option<SymTensor>,
        t4: Option<SymTensor>,
        n: f64,
    ) -> Result<Self> {
        check_sample_size(n)?;
        let d = quad.nrows();
        if quad.ncols() != d {
            return Err(GviError::ShapeMismatch {
                context: format!("quadratic part is {}x{}", d, quad.ncols()),
            });
        }
        let (min_eig, _) = sym_eig_range(&quad);
        if min_eig <= 0.0 {
            return Err(GviError::NotSpd {
                context: "polynomial quadratic part".to_string(),
                min_eig,
            });
        }
        let t3 = match t3 {
            Some(t) => expect_shape(t, 3, d)?,
            None => SymTensor::zeros(3, d)?,
        };
        let t4 = match t4 {
            Some(t) => expect_shape(t, 4, d)?,
            None => SymTensor::zeros(4, d)?,
        };
        let scale4 = t4.frobenius_norm();
        if scale4 > 0.0 {
            let scale3 = t3.frobenius_norm();
            let mut rng = ChaCha8Rng::seed_from_u64(0xB0B0);
            let mut dirs: Vec<DVector<f64>> = (0..512)
                .map(|_| {
                    let u = standard_normal_vector(d, &mut rng);
                    let norm = u.norm();
                    if norm > 1e-12 {
                        u / norm
                    } else {
                        DVector::from_element(d, (d as f64).sqrt().recip())
                    }
                })
                .collect();
            for axis in 0..d {
                let mut e = DVector::zeros(d);
                e[axis] = 1.0;
                dirs.push(e);
            }
            for u in &dirs {
                let q4 = t4.eval_at(u);
                if q4 < -1e-12 * scale4 {
                    return Err(GviError::UnboundedBelow { value: q4 });
                }
                if q4.abs() <= 1e-12 * scale4 {
                    let c3 = t3.eval_at(u);
                    if c3.abs() > 1e-12 * scale3.max(1e-300) {
                        return Err(GviError::UnboundedBelow { value: -c3.abs() });
                    }
                }
            }
        }
        Ok(PolynomialPotential { quad, t3, t4, n })
    }

    /// 1-D potential `v(x) = a·x²/2 + b·x³/6 + c·x⁴/24`.
    pub fn univariate(a: f64, b: f64, c: f64, n: f64) -> Result<Self> {
        let quad = DMatrix::from_element(1, 1, a);
        let t3 = SymTensor::symmetrize(3, 1, &[b])?;
        let t4 = SymTensor::symmetrize(4, 1, &[c])?;
        PolynomialPotential::new(quad, Some(t3), Some(t4), n)
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quad
    }

    pub fn cubic(&self) -> &SymTensor {
        &self.t3
    }

    pub fn quartic(&self) -> &SymTensor {
        &self.t4
    }
}

fn expect_shape(t: SymTensor, order: usize, dim: usize) -> Result<SymTensor> {
    if t.order() != order || t.dim() != dim {
        return Err(GviError::ShapeMismatch {
            context: format!(
                "tensor of order {} dim {}, expected order {} dim {}",
                t.order(),
                t.dim(),
                order,
                dim
            ),
        });
    }
    Ok(t)
}

fn check_sample_size(n: f64) -> Result<()> {
    if !(n.is_finite() && n >= 1.0) {
        return Err(GviError::InvalidArgument {
            context: format!("sample size must be >= 1, got {n}"),
        });
    }
    Ok(())
}

impl Potential for PolynomialPotential {
    fn dim(&self) -> usize {
        self.quad.nrows()
    }

    fn sample_size(&self) -> f64 {
        self.n
    }

    fn label(&self) -> String {
        format!("polynomial(d={})", self.dim())
    }

    fn v(&self, x: &DVector<f64>) -> f64 {
        let quad = 0.5 * x.dot(&(&self.quad * x));
        let cubic = self.t3.eval_at(x) / 6.0;
        let quartic = self.t4.eval_at(x) / 24.0;
        quad + cubic + quartic
    }

    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.quad * x;
        let c = self
            .t3
            .apply(&[x.clone(), x.clone()])
            .expect("shapes fixed")
            .tensor()
            .as_vector();
        g += c * 0.5;
        let q = self
            .t4
            .apply(&[x.clone(), x.clone(), x.clone()])
            .expect("shapes fixed")
            .tensor()
            .as_vector();
        g += q / 6.0;
        g
    }

    fn hess_v(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.quad.clone();
        let c = self
            .t3
            .apply(std::slice::from_ref(x))
            .expect("shapes fixed")
            .tensor()
            .as_matrix();
        h += c;
        let q = self
            .t4
            .apply(&[x.clone(), x.clone()])
            .expect("shapes fixed")
            .tensor()
            .as_matrix();
        h += q * 0.5;
        h
    }

    fn third_v(&self, x: &DVector<f64>) -> SymTensor {
        let q = self
            .t4
            .apply(std::slice::from_ref(x))
            .expect("shapes fixed")
            .tensor();
        self.t3.add(&q).expect("shapes fixed")
    }

    fn fourth_v(&self, _x: &DVector<f64>) -> Option<SymTensor> {
        Some(self.t4.clone())
    }
}

/// Data of a Bayesian logistic regression: features, binary labels, and an
/// optional Gaussian prior precision (None or zero = flat prior).
#[derive(Debug, Clone)]
pub struct LogisticPosteriorSpec {
    pub features: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub prior_precision: Option<DMatrix<f64>>,
}

impl LogisticPosteriorSpec {
    pub fn validate(&self) -> Result<()> {
        let rows = self.features.nrows();
        let d = self.features.ncols();
        if rows == 0 || d == 0 {
            return Err(GviError::InvalidArgument {
                context: "logistic data must have at least one row and one column".to_string(),
            });
        }
        if self.labels.len() != rows {
            return Err(GviError::ShapeMismatch {
                context: format!("{} labels for {} feature rows", self.labels.len(), rows),
            });
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(GviError::InvalidArgument {
                context: "labels must be 0 or 1".to_string(),
            });
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return Err(GviError::InvalidArgument {
                context: "features must be finite".to_string(),
            });
        }
        if let Some(p) = &self.prior_precision {
            if p.nrows() != d || p.ncols() != d {
                return Err(GviError::ShapeMismatch {
                    context: format!("prior precision is {}x{}, dim {}", p.nrows(), p.ncols(), d),
                });
            }
        }
        Ok(())
    }
}

/// log(1 + e^t), branch-stable across the full f64 range.
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Sigmoid σ(t) = 1/(1+e^{-t}), overflow-safe.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn psi2(s: f64) -> f64 {
    s * (1.0 - s)
}

#[inline]
fn psi3(s: f64) -> f64 {
    s * (1.0 - s) * (1.0 - 2.0 * s)
}

#[inline]
fn psi4(s: f64) -> f64 {
    let p2 = s * (1.0 - s);
    p2 * (1.0 - 6.0 * p2)
}

/// Logistic-regression posterior potential
/// `v(θ) = -θᵀ(Σ Y_i X_i)/n + (1/n) Σ ψ(X_iᵀθ) + θᵀ Σ⁻¹ θ/(2n)`,
/// with ψ(t) = log(1+e^t). Derivatives are sums of ψ^{(k)}(X_iᵀθ)·X_i^{⊗k}.
#[derive(Debug)]
pub struct LogisticPotential {
    spec: LogisticPosteriorSpec,
    /// (1/n) Σ Y_i X_i
    label_moment: DVector<f64>,
    n: f64,
}

impl LogisticPotential {
    pub fn new(spec: LogisticPosteriorSpec) -> Result<Self> {
        spec.validate()?;
        let rows = spec.features.nrows();
        let d = spec.features.ncols();
        let n = rows as f64;
        let mut label_moment = DVector::zeros(d);
        for (i, &y) in spec.labels.iter().enumerate() {
            if y == 1 {
                for j in 0..d {
                    label_moment[j] += spec.features[(i, j)];
                }
            }
        }
        label_moment /= n;
        Ok(LogisticPotential {
            spec,
            label_moment,
            n,
        })
    }

    pub fn spec(&self) -> &LogisticPosteriorSpec {
        &self.spec
    }

    fn row_dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        let d = self.spec.features.ncols();
        let mut acc = 0.0;
        for j in 0..d {
            acc += self.spec.features[(i, j)] * x[j];
        }
        acc
    }
}

impl Potential for LogisticPotential {
    fn dim(&self) -> usize {
        self.spec.features.ncols()
    }

    fn sample_size(&self) -> f64 {
        self.n
    }

    fn label(&self) -> String {
        format!("logistic(d={}, n={})", self.dim(), self.spec.features.nrows())
    }

    fn v(&self, x: &DVector<f64>) -> f64 {
        let rows = self.spec.features.nrows();
        let mut acc = 0.0;
        for i in 0..rows {
            acc += log1p_exp(self.row_dot(i, x));
        }
        let mut out = -x.dot(&self.label_moment) + acc / self.n;
        if let Some(p) = &self.spec.prior_precision {
            out += 0.5 * x.dot(&(p * x)) / self.n;
        }
        out
    }

    fn grad_v(&self, x: &DVector<f64>) -> DVector<f64> {
        let rows = self.spec.features.nrows();
        let d = self.dim();
        let mut g = DVector::zeros(d);
        for i in 0..rows {
            let s = sigmoid(self.row_dot(i, x));
            for j in 0..d {
                g[j] += s * self.spec.features[(i, j)];
            }
        }
        g /= self.n;
        g -= &self.label_moment;
        if let Some(p) = &self.spec.prior_precision {
            g += (p * x) / self.n;
        }
        g
    }

    fn hess_v(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let rows = self.spec.features.nrows();
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..rows {
            let c = psi2(sigmoid(self.row_dot(i, x)));
            for a in 0..d {
                let fa = c * self.spec.features[(i, a)];
                for b in 0..d {
                    h[(a, b)] += fa * self.spec.features[(i, b)];
                }
            }
        }
        h /= self.n;
        if let Some(p) = &self.spec.prior_precision {
            h += p / self.n;
        }
        h
    }

    fn third_v(&self, x: &DVector<f64>) -> SymTensor {
        let rows = self.spec.features.nrows();
        let d = self.dim();
        let mut raw = vec![0.0; d * d * d];
        for i in 0..rows {
            let c = psi3(sigmoid(self.row_dot(i, x))) / self.n;
            for a in 0..d {
                let fa = c * self.spec.features[(i, a)];
                for b in 0..d {
                    let fab = fa * self.spec.features[(i, b)];
                    for g in 0..d {
                        raw[(a * d + b) * d + g] += fab * self.spec.features[(i, g)];
                    }
                }
            }
        }
        SymTensor::symmetrize(3, d, &raw).expect("order 3 valid")
    }

    fn fourth_v(&self, x: &DVector<f64>) -> Option<SymTensor> {
        let rows = self.spec.features.nrows();
        let d = self.dim();
        let mut raw = vec![0.0; d * d * d * d];
        for i in 0..rows {
            let c = psi4(sigmoid(self.row_dot(i, x))) / self.n;
            for a in 0..d {
                let fa = c * self.spec.features[(i, a)];
                for b in 0..d {
                    let fab = fa * self.spec.features[(i, b)];
                    for g in 0..d {
                        let fabg = fab * self.spec.features[(i, g)];
                        for e in 0..d {
                            raw[((a * d + b) * d + g) * d + e] += fabg * self.spec.features[(i, e)];
                        }
                    }
                }
            }
        }
        Some(SymTensor::symmetrize(4, d, &raw).expect("order 4 valid"))
    }
}
