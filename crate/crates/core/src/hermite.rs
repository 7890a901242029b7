//! Multivariate Hermite tensors H_k(x), series coefficients A_k, the cubic
//! correction polynomial (p3 in whitened coordinates, Q in the original
//! ones), and the exact integral form of the series remainder.
//!
//! Conventions: probabilists' polynomials, H_0 = 1, H_1(x) = x,
//! H_2(x) = xxᵀ - I; coefficients A_k(f) = E[f(Z) H_k(Z)], which equals
//! E[∇^k f(Z)] for smooth f by Gaussian integration by parts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GviError, Result};
use crate::fit::GaussianApprox;
use crate::potential::Potential;
use crate::quadrature::QuadratureRule;
use crate::tensor::SymTensor;
use crate::util::gauss_legendre_01;

/// Order-k Hermite tensor H_k(x), k in 1..=4 (H_0 is identically 1).
///
/// Entries follow the expansion of E[(x + iZ)^⊗k]: products of the x
/// components minus Kronecker-delta pairings, e.g.
/// `H_3(x)[i,j,k] = x_i x_j x_k - x_i δ_jk - x_j δ_ik - x_k δ_ij`.
pub fn hermite_tensor(k: usize, x: &DVector<f64>) -> Result<SymTensor> {
    let d = x.len();
    match k {
        1 => Ok(SymTensor::from_vector(x)),
        2 => {
            let mut raw = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    // products in sorted index order keep orbits bit-equal
                    let (a, b) = if i <= j { (i, j) } else { (j, i) };
                    raw[i * d + j] = x[a] * x[b] - f64::from(u8::from(i == j));
                }
            }
            SymTensor::symmetrize(2, d, &raw)
        }
        3 => {
            let mut raw = vec![0.0; d * d * d];
            for i in 0..d {
                for j in 0..d {
                    for l in 0..d {
                        let mut s = [i, j, l];
                        s.sort_unstable();
                        let mut val = x[s[0]] * x[s[1]] * x[s[2]];
                        if j == l {
                            val -= x[i];
                        }
                        if i == l {
                            val -= x[j];
                        }
                        if i == j {
                            val -= x[l];
                        }
                        raw[(i * d + j) * d + l] = val;
                    }
                }
            }
            SymTensor::symmetrize(3, d, &raw)
        }
        4 => {
            let mut raw = vec![0.0; d * d * d * d];
            let pair = |a: usize, b: usize| {
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                x[a] * x[b]
            };
            for i in 0..d {
                for j in 0..d {
                    for l in 0..d {
                        for m in 0..d {
                            let mut s = [i, j, l, m];
                            s.sort_unstable();
                            let mut val = (x[s[0]] * x[s[1]]) * (x[s[2]] * x[s[3]]);
                            if l == m {
                                val -= pair(i, j);
                            }
                            if j == m {
                                val -= pair(i, l);
                            }
                            if j == l {
                                val -= pair(i, m);
                            }
                            if i == m {
                                val -= pair(j, l);
                            }
                            if i == l {
                                val -= pair(j, m);
                            }
                            if i == j {
                                val -= pair(l, m);
                            }
                            let dd = |a: usize, b: usize, c: usize, e: usize| {
                                f64::from(u8::from(a == b && c == e))
                            };
                            val += dd(i, j, l, m) + dd(i, l, j, m) + dd(i, m, j, l);
                            raw[((i * d + j) * d + l) * d + m] = val;
                        }
                    }
                }
            }
            SymTensor::symmetrize(4, d, &raw)
        }
        _ => Err(GviError::UnsupportedOrder { order: k }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffSource {
    ViaDerivatives,
    ViaProjection,
}

/// Hermite coefficients A_0..A_K of a function (A_0 scalar, A_k an order-k
/// symmetric tensor).
#[derive(Debug, Clone)]
pub struct HermiteCoeffs {
    a0: f64,
    tensors: Vec<SymTensor>,
    source: CoeffSource,
}

impl HermiteCoeffs {
    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn max_order(&self) -> usize {
        self.tensors.len()
    }

    pub fn source(&self) -> CoeffSource {
        self.source
    }

    /// A_k for k in 1..=max_order.
    pub fn tensor(&self, k: usize) -> Option<&SymTensor> {
        if k == 0 || k > self.tensors.len() {
            None
        } else {
            Some(&self.tensors[k - 1])
        }
    }

    /// Truncated series Σ_{k<=K} <A_k, H_k(x)> / k!.
    pub fn eval_series(&self, x: &DVector<f64>) -> Result<f64> {
        let mut total = self.a0;
        let mut factorial = 1.0;
        for (idx, a) in self.tensors.iter().enumerate() {
            let k = idx + 1;
            factorial *= k as f64;
            total += a.inner(&hermite_tensor(k, x)?)? / factorial;
        }
        Ok(total)
    }
}

fn nth_derivative_total(
    p: &(impl Potential + ?Sized),
    k: usize,
    x: &DVector<f64>,
) -> Result<SymTensor> {
    match k {
        1 => Ok(SymTensor::from_vector(&p.grad_total(x))),
        2 => SymTensor::from_matrix(&p.hess_total(x)),
        3 => Ok(p.third_total(x)),
        4 => p.fourth_total(x).ok_or_else(|| GviError::InvalidArgument {
            context: "potential provides no fourth derivative".to_string(),
        }),
        _ => Err(GviError::UnsupportedOrder { order: k }),
    }
}

/// Coefficients of the full potential V = n·v by Gaussian integration by
/// parts: A_k = E[∇^k V(Z)] for k <= 4.
pub fn coeffs_via_derivatives(
    p: &(impl Potential + ?Sized),
    rule: &QuadratureRule,
    k_max: usize,
) -> Result<HermiteCoeffs> {
    if k_max > 4 {
        return Err(GviError::UnsupportedOrder { order: k_max });
    }
    let d = p.dim();
    if k_max >= 4 {
        // derivative availability probed once; families supply it uniformly
        nth_derivative_total(p, 4, &DVector::zeros(d))?;
    }
    let a0 = rule.expect_scalar(|z| p.total(z))?;
    let mut tensors = Vec::new();
    for k in 1..=k_max {
        tensors.push(rule.expect_tensor(k, d, |z| {
            nth_derivative_total(p, k, z).expect("availability checked above")
        })?);
    }
    Ok(HermiteCoeffs {
        a0,
        tensors,
        source: CoeffSource::ViaDerivatives,
    })
}

/// Coefficients of an arbitrary square-integrable function by projection:
/// A_k(f) = E[f(Z) H_k(Z)].
pub fn coeffs_via_projection(
    f: impl Fn(&DVector<f64>) -> f64,
    rule: &QuadratureRule,
    dim: usize,
    k_max: usize,
) -> Result<HermiteCoeffs> {
    if k_max > 4 {
        return Err(GviError::UnsupportedOrder { order: k_max });
    }
    let a0 = rule.expect_scalar(&f)?;
    let mut tensors = Vec::new();
    for k in 1..=k_max {
        tensors.push(rule.expect_tensor(k, dim, |z| {
            hermite_tensor(k, z).expect("order validated").scale(f(z))
        })?);
    }
    Ok(HermiteCoeffs {
        a0,
        tensors,
        source: CoeffSource::ViaProjection,
    })
}

/// `p3(x) = <A_3, H_3(x)>/3! = <A_3, x^⊗3/6 - x ⊗ I/2>`; odd in x and
/// orthogonal to all polynomials of degree <= 2 under the Gaussian.
pub fn p3_eval(a3: &SymTensor, x: &DVector<f64>) -> Result<f64> {
    if a3.order() != 3 {
        return Err(GviError::ShapeMismatch {
            context: format!("p3 needs an order-3 tensor, got order {}", a3.order()),
        });
    }
    Ok(a3.inner(&hermite_tensor(3, x)?)? / 6.0)
}

/// The cubic correction polynomial
/// `Q(x) = <E_{X~π̂}[∇³V(X)], (x-m̂) ⊗ Ŝ/2 - (x-m̂)^⊗3/6>`,
/// with `∫g dπ ≈ ∫g dπ̂ + ∫gQ dπ̂` as the corrected integral. Equals
/// `-p3(S^{-1/2}(x-m̂))` for the whitened coefficient tensor.
#[derive(Debug, Clone)]
pub struct CorrectionPolynomial {
    third_moment: SymTensor,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl CorrectionPolynomial {
    /// Computes `E_{X~π̂}[∇³V(X)]` by quadrature and fixes the polynomial.
    pub fn build(
        p: &(impl Potential + ?Sized),
        approx: &GaussianApprox,
        rule: &QuadratureRule,
    ) -> Result<Self> {
        let d = p.dim();
        if approx.dim() != d || rule.dim() != d {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "correction polynomial: potential dim {}, fit dim {}, rule dim {}",
                    d,
                    approx.dim(),
                    rule.dim()
                ),
            });
        }
        let third_moment =
            rule.expect_tensor(3, d, |z| p.third_total(&approx.unwhiten(z)))?;
        Ok(CorrectionPolynomial {
            third_moment,
            mean: approx.mean().clone(),
            cov: approx.cov().clone(),
        })
    }

    pub fn third_moment(&self) -> &SymTensor {
        &self.third_moment
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let delta = x - &self.mean;
        let m = self
            .third_moment
            .apply(std::slice::from_ref(&delta))
            .expect("shape fixed at construction")
            .tensor()
            .as_matrix();
        let term1 = 0.5 * m.component_mul(&self.cov).sum();
        let term2 = self
            .third_moment
            .apply(&[delta.clone(), delta.clone(), delta])
            .expect("shape fixed at construction")
            .scalar()
            / 6.0;
        term1 - term2
    }
}

/// One-shot evaluation of Q at a point (builds the coefficient tensor each
/// call; use [`CorrectionPolynomial`] for repeated evaluation).
pub fn q_eval(
    p: &(impl Potential + ?Sized),
    approx: &GaussianApprox,
    rule: &QuadratureRule,
    x: &DVector<f64>,
) -> Result<f64> {
    Ok(CorrectionPolynomial::build(p, approx, rule)?.eval(x))
}

/// Hermite series remainder after the order-(k-1) truncation, by the exact
/// integral form
/// `r_k(x) = ∫_0^1 (1-t)^{k-1}/(k-1)! · E[<∇^k V((1-t)Z + tx),
///            H_k(x) - Z ⊗ H_{k-1}(x)>] dt`,
/// with Gauss-Legendre in t and the supplied rule in Z.
pub fn remainder_rk(
    p: &(impl Potential + ?Sized),
    rule: &QuadratureRule,
    k: usize,
    x: &DVector<f64>,
    t_nodes: usize,
) -> Result<f64> {
    if k == 0 || k > 4 {
        return Err(GviError::UnsupportedOrder { order: k });
    }
    let d = p.dim();
    nth_derivative_total(p, k, &DVector::zeros(d))?;
    let h_k = hermite_tensor(k, x)?;
    let h_km1 = if k >= 2 {
        Some(hermite_tensor(k - 1, x)?)
    } else {
        None
    };
    let (t_pts, t_wts) = gauss_legendre_01(t_nodes.max(1));
    let mut factorial = 1.0;
    for j in 2..k {
        factorial *= j as f64;
    }
    let mut total = 0.0;
    for (&t, &wt) in t_pts.iter().zip(&t_wts) {
        let inner = rule.expect_scalar(|z| {
            let y = z * (1.0 - t) + x * t;
            let dk = nth_derivative_total(p, k, &y).expect("availability checked above");
            let lead = dk.inner(&h_k).expect("orders match");
            let trail = match &h_km1 {
                Some(h) => dk
                    .apply(std::slice::from_ref(z))
                    .expect("shape checked")
                    .tensor()
                    .inner(h)
                    .expect("orders match"),
                None => dk.apply(std::slice::from_ref(z)).expect("shape checked").scalar(),
            };
            lead - trail
        })?;
        total += wt * (1.0 - t).powi(k as i32 - 1) / factorial * inner;
    }
    Ok(total)
}
