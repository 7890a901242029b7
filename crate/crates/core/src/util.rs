//! Shared numerical helpers: deterministic summation, seed derivation, and
//! symmetric-matrix spectral calculus.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GviError, Result};

/// A d-vector of independent standard normals from the given generator.
pub fn standard_normal_vector(dim: usize, rng: &mut impl rand::Rng) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| {
        let x: f64 = StandardNormal.sample(rng);
        x
    })
}

/// Pairwise (cascade) summation. The reduction tree depends only on the slice
/// length, so results are independent of evaluation schedule.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// SplitMix64 step, the standard seed-expansion permutation.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a substream seed from a base seed and a salt, so that distinct
/// (base, salt) pairs get statistically independent streams.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// Eigendecomposition of a (symmetrized) matrix. Returns eigenvalues and the
/// matrix whose columns are the corresponding orthonormal eigenvectors.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Applies `f` to the eigenvalues of an SPD matrix. Errors when the smallest
/// eigenvalue is not strictly positive (relative to the largest magnitude).
pub fn spd_spectral_map(
    m: &DMatrix<f64>,
    context: &str,
    f: impl Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(m);
    let max_abs = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min_eig = vals.min();
    if min_eig <= 1e-14 * max_abs.max(1e-300) || !min_eig.is_finite() {
        return Err(GviError::NotSpd {
            context: context.to_string(),
            min_eig,
        });
    }
    let mapped = DMatrix::from_diagonal(&vals.map(f));
    let out = &vecs * mapped * vecs.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Operator norm (largest |eigenvalue|) of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

/// Eigenvalue range (min, max) of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let (vals, _) = sym_eigen(m);
    (vals.min(), vals.max())
}

/// Gauss-Legendre nodes and weights on [0, 1] via Golub-Welsch.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = i as f64 / ((4 * i * i - 1) as f64).sqrt();
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let x = eig.eigenvalues[j];
            let w = 2.0 * eig.eigenvectors[(0, j)].powi(2);
            ((x + 1.0) * 0.5, w * 0.5)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
