//! Expectations E[φ(Z)] for Z ~ N(0, I_d): deterministic Gauss-Hermite tensor
//! rules (probabilists' normalization, weights summing to 1) and seeded
//! Monte Carlo with per-node substreams.

use nalgebra::{DMatrix, DVector};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GviError, Result};
use crate::tensor::SymTensor;
use crate::util::{mix_seed, pairwise_sum};

/// Hard cap on tensor-product node counts.
pub const NODE_BUDGET: u64 = 10_000_000;

/// Nodes-per-axis used by [`QuadratureRule::default_for_dim`] for small d.
pub const DEFAULT_GH_LEVEL: usize = 20;

/// Sample count used by [`QuadratureRule::default_for_dim`] for larger d.
pub const DEFAULT_MC_SAMPLES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadKind {
    GaussHermiteTensor,
    MonteCarlo,
}

/// A node/weight rule approximating expectations under N(0, I_d).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    kind: QuadKind,
    dim: usize,
    level: usize,
    seed: Option<u64>,
    nodes: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

/// 1-D probabilists' Gauss-Hermite nodes/weights by Golub-Welsch: the Jacobi
/// matrix has zero diagonal and off-diagonal sqrt(i); weights are the squared
/// first eigenvector components and sum to exactly 1.
fn gauss_hermite_1d(level: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(level >= 1);
    let mut jacobi = DMatrix::zeros(level, level);
    for i in 1..level {
        let b = (i as f64).sqrt();
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..level)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

impl QuadratureRule {
    /// Tensor-product Gauss-Hermite rule with `level` nodes per axis,
    /// integrating every polynomial of per-axis degree <= 2·level - 1 exactly.
    pub fn gauss_hermite(dim: usize, level: usize) -> Result<Self> {
        if dim == 0 || level == 0 {
            return Err(GviError::InvalidArgument {
                context: format!("gauss_hermite requires dim >= 1 and level >= 1, got {dim}, {level}"),
            });
        }
        let count = (level as u128).pow(dim as u32);
        if count > NODE_BUDGET as u128 {
            return Err(GviError::NodeBudget {
                nodes: count,
                budget: NODE_BUDGET,
            });
        }
        let (nodes_1d, weights_1d) = gauss_hermite_1d(level);
        let total = count as usize;
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut index = vec![0usize; dim];
        for _ in 0..total {
            let mut node = DVector::zeros(dim);
            let mut w = 1.0;
            for (axis, &i) in index.iter().enumerate() {
                node[axis] = nodes_1d[i];
                w *= weights_1d[i];
            }
            nodes.push(node);
            weights.push(w);
            for axis in (0..dim).rev() {
                index[axis] += 1;
                if index[axis] < level {
                    break;
                }
                index[axis] = 0;
            }
        }
        Ok(QuadratureRule {
            kind: QuadKind::GaussHermiteTensor,
            dim,
            level,
            seed: None,
            nodes,
            weights,
        })
    }

    /// Seeded Monte Carlo rule with `samples` standard-normal nodes. Node `i`
    /// is drawn from its own substream of (seed, i), so the node set does not
    /// depend on evaluation order.
    pub fn monte_carlo(dim: usize, samples: usize, seed: u64) -> Result<Self> {
        if dim == 0 || samples == 0 {
            return Err(GviError::InvalidArgument {
                context: format!("monte_carlo requires dim >= 1 and samples >= 1, got {dim}, {samples}"),
            });
        }
        let w = 1.0 / samples as f64;
        let mut nodes = Vec::with_capacity(samples);
        for i in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let node = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            nodes.push(node);
        }
        Ok(QuadratureRule {
            kind: QuadKind::MonteCarlo,
            dim,
            level: samples,
            seed: Some(seed),
            nodes,
            weights: vec![w; samples],
        })
    }

    /// Default engine: Gauss-Hermite tensor rule for d <= 4, Monte Carlo
    /// beyond that.
    pub fn default_for_dim(dim: usize) -> Result<Self> {
        if dim <= 4 {
            Self::gauss_hermite(dim, DEFAULT_GH_LEVEL)
        } else {
            Self::monte_carlo(dim, DEFAULT_MC_SAMPLES, 0)
        }
    }

    pub fn kind(&self) -> QuadKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis (Gauss-Hermite) or sample count (Monte Carlo).
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[DVector<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[φ(Z)] for scalar φ, with pairwise reduction in node order.
    pub fn expect_scalar(&self, phi: impl Fn(&DVector<f64>) -> f64) -> Result<f64> {
        let mut vals = Vec::with_capacity(self.len());
        for (i, (node, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let v = phi(node);
            if !v.is_finite() {
                return Err(GviError::NonFiniteIntegrand { node_index: i });
            }
            vals.push(w * v);
        }
        Ok(pairwise_sum(&vals))
    }

    fn expect_flat(
        &self,
        out_len: usize,
        mut eval: impl FnMut(&DVector<f64>, &mut [f64]),
    ) -> Result<Vec<f64>> {
        let n = self.len();
        let mut table = vec![0.0; n * out_len];
        let mut scratch = vec![0.0; out_len];
        for (i, (node, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            eval(node, &mut scratch);
            for (c, &v) in scratch.iter().enumerate() {
                if !v.is_finite() {
                    return Err(GviError::NonFiniteIntegrand { node_index: i });
                }
                table[c * n + i] = w * v;
            }
        }
        Ok((0..out_len)
            .map(|c| pairwise_sum(&table[c * n..(c + 1) * n]))
            .collect())
    }

    /// E[φ(Z)] for vector-valued φ.
    pub fn expect_vector(
        &self,
        out_dim: usize,
        phi: impl Fn(&DVector<f64>) -> DVector<f64>,
    ) -> Result<DVector<f64>> {
        let flat = self.expect_flat(out_dim, |node, out| {
            let v = phi(node);
            debug_assert_eq!(v.len(), out_dim);
            out.copy_from_slice(v.as_slice());
        })?;
        Ok(DVector::from_vec(flat))
    }

    /// E[φ(Z)] for matrix-valued φ.
    pub fn expect_matrix(
        &self,
        rows: usize,
        cols: usize,
        phi: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let flat = self.expect_flat(rows * cols, |node, out| {
            let m = phi(node);
            debug_assert_eq!((m.nrows(), m.ncols()), (rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    out[i * cols + j] = m[(i, j)];
                }
            }
        })?;
        Ok(DMatrix::from_fn(rows, cols, |i, j| flat[i * cols + j]))
    }

    /// E[φ(Z)] for symmetric-tensor-valued φ.
    pub fn expect_tensor(
        &self,
        order: usize,
        dim: usize,
        phi: impl Fn(&DVector<f64>) -> SymTensor,
    ) -> Result<SymTensor> {
        let len = dim.pow(order as u32);
        let flat = self.expect_flat(len, |node, out| {
            let t = phi(node);
            debug_assert_eq!((t.order(), t.dim()), (order, dim));
            out.copy_from_slice(t.entries());
        })?;
        SymTensor::symmetrize(order, dim, &flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// E[Π z_j^{a_j}] for independent standard normals: product of
    /// (a_j − 1)!! over even exponents, zero if any exponent is odd.
    fn gaussian_monomial_moment(exps: &[u32]) -> f64 {
        let mut m = 1.0;
        for &a in exps {
            if a % 2 == 1 {
                return 0.0;
            }
            let mut df = 1.0;
            let mut k = a as i64 - 1;
            while k > 1 {
                df *= k as f64;
                k -= 2;
            }
            m *= df;
        }
        m
    }

    #[test]
    fn two_point_rule_is_plus_minus_one() {
        let rule = QuadratureRule::gauss_hermite(1, 2).unwrap();
        let mut nodes: Vec<f64> = rule.nodes().iter().map(|n| n[0]).collect();
        nodes.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(nodes[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nodes[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rule.weights()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rule.weights()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tensor_rule_has_level_pow_dim_nodes_and_unit_mass() {
        let rule = QuadratureRule::gauss_hermite(2, 3).unwrap();
        assert_eq!(rule.len(), 9);
        let total: f64 = rule.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(rule.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn monte_carlo_is_deterministic_per_seed() {
        let a = QuadratureRule::monte_carlo(2, 1000, 7).unwrap();
        let b = QuadratureRule::monte_carlo(2, 1000, 7).unwrap();
        for (x, y) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(x, y);
        }
        let c = QuadratureRule::monte_carlo(2, 1000, 8).unwrap();
        assert_ne!(a.nodes()[0], c.nodes()[0]);
    }

    #[test]
    fn budget_error_points_to_monte_carlo() {
        let err = QuadratureRule::gauss_hermite(10, 10).unwrap_err();
        assert!(matches!(err, GviError::NodeBudget { .. }));
        assert!(err.to_string().contains("monte_carlo"));
    }

    #[test]
    fn second_moment_is_one() {
        let rule = QuadratureRule::gauss_hermite(1, 5).unwrap();
        let m2 = rule.expect_scalar(|z| z[0] * z[0]).unwrap();
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn centered_cubic_integrates_to_zero() {
        let rule = QuadratureRule::gauss_hermite(1, 5).unwrap();
        let m = rule.expect_scalar(|z| z[0].powi(3) - 3.0 * z[0]).unwrap();
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn outer_product_expectation_is_identity() {
        let rule = QuadratureRule::gauss_hermite(2, 6).unwrap();
        let m = rule.expect_matrix(2, 2, |z| z * z.transpose()).unwrap();
        assert_abs_diff_eq!((m - DMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn random_polynomials_integrate_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for dim in 1..=3usize {
            let level = 4; // exact through per-axis degree 7
            let rule = QuadratureRule::gauss_hermite(dim, level).unwrap();
            for _ in 0..5 {
                // random monomial sum with per-axis exponents <= 2·level − 1
                let terms: Vec<(f64, Vec<u32>)> = (0..6)
                    .map(|_| {
                        let coeff = rng.random::<f64>() * 2.0 - 1.0;
                        let exps: Vec<u32> =
                            (0..dim).map(|_| rng.random_range(0..=(2 * level as u32 - 1))).collect();
                        (coeff, exps)
                    })
                    .collect();
                let expected: f64 = terms
                    .iter()
                    .map(|(c, e)| c * gaussian_monomial_moment(e))
                    .sum();
                let got = rule
                    .expect_scalar(|z| {
                        terms
                            .iter()
                            .map(|(c, e)| {
                                c * e
                                    .iter()
                                    .enumerate()
                                    .map(|(j, &a)| z[j].powi(a as i32))
                                    .product::<f64>()
                            })
                            .sum()
                    })
                    .unwrap();
                assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_gauss_hermite_within_three_standard_errors() {
        let phi = |z: &DVector<f64>| (0.7 * z[0] + 0.2 * z[1]).cos();
        let gh = QuadratureRule::gauss_hermite(2, 30).unwrap();
        let exact = gh.expect_scalar(phi).unwrap();
        let samples = 100_000;
        let mc = QuadratureRule::monte_carlo(2, samples, 5).unwrap();
        let est = mc.expect_scalar(phi).unwrap();
        let second = mc.expect_scalar(|z| phi(z).powi(2)).unwrap();
        let se = ((second - est * est).max(0.0) / samples as f64).sqrt();
        assert!(
            (est - exact).abs() <= 3.0 * se,
            "mc {est} vs gh {exact}, se {se}"
        );
    }

    #[test]
    fn expectation_is_linear() {
        let rule = QuadratureRule::gauss_hermite(2, 8).unwrap();
        let f = |z: &DVector<f64>| (z[0] - 0.3).powi(4);
        let g = |z: &DVector<f64>| (z[1] * z[0]).sin();
        let (a, b) = (2.5, -1.25);
        let lhs = rule.expect_scalar(|z| a * f(z) + b * g(z)).unwrap();
        let rhs = a * rule.expect_scalar(f).unwrap() + b * rule.expect_scalar(g).unwrap();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-13 * lhs.abs().max(1.0));
    }

    #[test]
    fn non_finite_integrand_reports_node_index() {
        let rule = QuadratureRule::gauss_hermite(1, 3).unwrap();
        let err = rule
            .expect_scalar(|z| if z[0] > 0.0 { f64::NAN } else { 0.0 })
            .unwrap_err();
        assert!(matches!(err, GviError::NonFiniteIntegrand { .. }));
    }
}
