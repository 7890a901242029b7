//! Dense symmetric tensors of order 1..=4: inner products, contractions,
//! symmetrization, and (H-weighted) operator norms.
//!
//! Entries are stored row-major over multi-indices `(i1, ..., ik)` with the
//! last index fastest. Target dimensions are small (d of order ten), so the
//! dense layout wins over compressed symmetric storage.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{GviError, Result};
use crate::util::{spd_spectral_map, sym_eig_range, sym_op_norm};

/// Largest supported tensor order; fourth derivatives are the highest the
/// solvers and diagnostics ever need.
pub const MAX_ORDER: usize = 4;

/// Dense symmetric tensor of order `1..=4` over dimension `d`.
///
/// Entries are invariant under every permutation of indices, bit-exactly:
/// construction routes through a canonical per-orbit average.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    order: usize,
    dim: usize,
    entries: Vec<f64>,
}

/// Result of contracting trailing slots of a tensor with vectors.
#[derive(Debug, Clone)]
pub enum Applied {
    Scalar(f64),
    Tensor(SymTensor),
}

impl Applied {
    pub fn scalar(self) -> f64 {
        match self {
            Applied::Scalar(s) => s,
            Applied::Tensor(t) => panic!("expected scalar, got order-{} tensor", t.order()),
        }
    }

    pub fn tensor(self) -> SymTensor {
        match self {
            Applied::Tensor(t) => t,
            Applied::Scalar(_) => panic!("expected tensor, got scalar"),
        }
    }
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(GviError::UnsupportedOrder { order });
    }
    Ok(())
}

fn flat_index(dim: usize, multi: &[usize]) -> usize {
    let mut idx = 0;
    for &i in multi {
        idx = idx * dim + i;
    }
    idx
}

fn unflatten(dim: usize, order: usize, mut idx: usize, out: &mut [usize]) {
    for slot in (0..order).rev() {
        out[slot] = idx % dim;
        idx /= dim;
    }
}

impl SymTensor {
    /// Symmetrizes a raw dense array by averaging over all index
    /// permutations. Idempotent on already-symmetric input, and the output is
    /// exactly permutation invariant (one average per index orbit).
    pub fn symmetrize(order: usize, dim: usize, raw: &[f64]) -> Result<Self> {
        check_order(order)?;
        let len = dim.pow(order as u32);
        if raw.len() != len {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "raw array has {} entries, expected {}^{} = {}",
                    raw.len(),
                    dim,
                    order,
                    len
                ),
            });
        }
        let mut entries = vec![0.0; len];
        let perms: Vec<Vec<usize>> = (0..order).permutations(order).collect();
        let inv_fact = 1.0 / perms.len() as f64;
        let mut multi = vec![0usize; order];
        let mut permuted = vec![0usize; order];
        for idx in 0..len {
            unflatten(dim, order, idx, &mut multi);
            if !multi.windows(2).all(|w| w[0] <= w[1]) {
                continue; // handled from its sorted representative
            }
            let first = raw[idx];
            let mut constant_orbit = true;
            let mut acc = 0.0;
            for perm in &perms {
                for (slot, &src) in perm.iter().enumerate() {
                    permuted[slot] = multi[src];
                }
                let v = raw[flat_index(dim, &permuted)];
                constant_orbit &= v == first;
                acc += v;
            }
            // already-symmetric orbits keep their value bit-exactly
            let value = if constant_orbit { first } else { acc * inv_fact };
            for perm in &perms {
                for (slot, &src) in perm.iter().enumerate() {
                    permuted[slot] = multi[src];
                }
                entries[flat_index(dim, &permuted)] = value;
            }
        }
        Ok(SymTensor {
            order,
            dim,
            entries,
        })
    }

    /// Zero tensor of the given shape.
    pub fn zeros(order: usize, dim: usize) -> Result<Self> {
        check_order(order)?;
        Ok(SymTensor {
            order,
            dim,
            entries: vec![0.0; dim.pow(order as u32)],
        })
    }

    /// Order-1 tensor from a vector.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        SymTensor {
            order: 1,
            dim: v.len(),
            entries: v.iter().copied().collect(),
        }
    }

    /// Order-2 tensor from a (possibly slightly asymmetric) square matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(GviError::ShapeMismatch {
                context: format!("{}x{} matrix is not square", m.nrows(), m.ncols()),
            });
        }
        let raw: Vec<f64> = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self::symmetrize(2, m.nrows(), &raw)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, multi: &[usize]) -> f64 {
        debug_assert_eq!(multi.len(), self.order);
        self.entries[flat_index(self.dim, multi)]
    }

    pub fn as_vector(&self) -> DVector<f64> {
        assert_eq!(self.order, 1);
        DVector::from_column_slice(&self.entries)
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2);
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entries[i * self.dim + j])
    }

    fn same_shape(&self, other: &SymTensor) -> Result<()> {
        if self.order != other.order || self.dim != other.dim {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "order {} dim {} vs order {} dim {}",
                    self.order, self.dim, other.order, other.dim
                ),
            });
        }
        Ok(())
    }

    /// Entrywise inner product `<T, S>`.
    pub fn inner(&self, other: &SymTensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&self, c: f64) -> SymTensor {
        SymTensor {
            order: self.order,
            dim: self.dim,
            entries: self.entries.iter().map(|x| c * x).collect(),
        }
    }

    pub fn add(&self, other: &SymTensor) -> Result<SymTensor> {
        self.same_shape(other)?;
        Ok(SymTensor {
            order: self.order,
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    fn contract_last(entries: &[f64], dim: usize, u: &DVector<f64>) -> Vec<f64> {
        let blocks = entries.len() / dim;
        let mut out = vec![0.0; blocks];
        for (j, chunk) in entries.chunks_exact(dim).enumerate() {
            let mut acc = 0.0;
            for i in 0..dim {
                acc += chunk[i] * u[i];
            }
            out[j] = acc;
        }
        out
    }

    /// Contracts the trailing `vectors.len()` slots with the given vectors,
    /// i.e. `<T, . ⊗ u_1 ⊗ ... ⊗ u_l>`. For a symmetric tensor the slot
    /// choice is immaterial. Full contraction yields a scalar.
    pub fn apply(&self, vectors: &[DVector<f64>]) -> Result<Applied> {
        if vectors.len() > self.order {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "cannot contract {} vectors into an order-{} tensor",
                    vectors.len(),
                    self.order
                ),
            });
        }
        for u in vectors {
            if u.len() != self.dim {
                return Err(GviError::ShapeMismatch {
                    context: format!("vector length {} does not match dim {}", u.len(), self.dim),
                });
            }
        }
        let mut cur = self.entries.clone();
        for u in vectors.iter().rev() {
            cur = Self::contract_last(&cur, self.dim, u);
        }
        let remaining = self.order - vectors.len();
        if remaining == 0 {
            Ok(Applied::Scalar(cur[0]))
        } else {
            Ok(Applied::Tensor(SymTensor {
                order: remaining,
                dim: self.dim,
                entries: cur,
            }))
        }
    }

    /// Contracts all but one slot with copies of `u`, returning the gradient
    /// direction `T u^{k-1}` used by the power iteration.
    fn apply_uniform_all_but_one(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut cur = self.entries.clone();
        for _ in 0..self.order - 1 {
            cur = Self::contract_last(&cur, self.dim, u);
        }
        DVector::from_vec(cur)
    }

    /// `<T, u^{⊗k}>`.
    pub fn eval_at(&self, u: &DVector<f64>) -> f64 {
        let mut cur = self.entries.clone();
        for _ in 0..self.order {
            cur = Self::contract_last(&cur, self.dim, u);
        }
        cur[0]
    }

    /// Transforms every slot by the matrix `m`: `T'(j..) = Σ T(i..) Π m[i_l, j_l]`.
    /// For order 1 this is `mᵀ t`, for order 2 it is `mᵀ T m`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Result<SymTensor> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(GviError::ShapeMismatch {
                context: format!(
                    "congruence matrix is {}x{}, tensor dim {}",
                    m.nrows(),
                    m.ncols(),
                    self.dim
                ),
            });
        }
        let d = self.dim;
        let mut cur = self.entries.clone();
        let block = cur.len() / d;
        let mut next = vec![0.0; cur.len()];
        for _ in 0..self.order {
            // contract the leading slot with m, then rotate it to the back
            for rest in 0..block {
                for j in 0..d {
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += m[(i, j)] * cur[i * block + rest];
                    }
                    next[rest * d + j] = acc;
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        // restore exact permutation invariance lost to summation order
        SymTensor::symmetrize(self.order, d, &cur)
    }

    /// H-weighted operator norm `sup_{|u|_H = 1} |<T, u^{⊗k}>|` (Euclidean
    /// when `weight` is `None`). Exact for orders 1 and 2; orders 3 and 4 use
    /// a shifted symmetric power iteration with seeded random restarts.
    pub fn op_norm(&self, weight: Option<&WeightMatrix>) -> f64 {
        let whitened;
        let t = match weight {
            Some(w) => {
                whitened = self
                    .congruence(w.inv_sqrt())
                    .expect("weight dimension checked by WeightMatrix");
                &whitened
            }
            None => self,
        };
        match t.order {
            1 => t.as_vector().norm(),
            2 => sym_op_norm(&t.as_matrix()),
            _ => {
                let up = shifted_power_max(t, 8, 1e-14);
                let down = shifted_power_max(&t.scale(-1.0), 8, 1e-14);
                up.max(down).max(0.0)
            }
        }
    }
}

/// Maximizes `<T, u^{⊗k}>` over the unit sphere by the shifted symmetric
/// power iteration `u <- normalize(T u^{k-1} + α u)`; the shift keeps the
/// ascent monotone. Restarts handle the nonconvexity at these small dims.
fn shifted_power_max(t: &SymTensor, restarts: usize, tol: f64) -> f64 {
    let d = t.dim;
    let scale = t.frobenius_norm().max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7EA5_0123);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..restarts {
        let mut u = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        if u.norm() < 1e-12 {
            u = DVector::from_element(d, 1.0);
        }
        u /= u.norm();
        // small shift for speed, doubled whenever the ascent turns
        // non-monotone (large shifts always converge but slowly)
        let mut alpha = 0.25 * scale;
        let mut lambda = t.eval_at(&u);
        for _ in 0..5000 {
            let mut g = t.apply_uniform_all_but_one(&u);
            g.axpy(alpha, &u, 1.0);
            let norm = g.norm();
            if norm < 1e-300 {
                break;
            }
            let cand = g / norm;
            let next = t.eval_at(&cand);
            if next + 1e-15 * scale < lambda {
                alpha *= 2.0;
                continue;
            }
            u = cand;
            if (next - lambda).abs() <= tol * lambda.abs().max(1.0) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        best = best.max(lambda);
    }
    best
}

/// Symmetric positive-definite weight matrix with cached square root and
/// inverse square root, used for `H`-weighted norms.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    h: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    min_eig: f64,
    max_eig: f64,
}

impl WeightMatrix {
    pub fn new(h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(GviError::ShapeMismatch {
                context: format!("weight matrix is {}x{}", h.nrows(), h.ncols()),
            });
        }
        let sqrt = spd_spectral_map(&h, "weight matrix square root", f64::sqrt)?;
        let inv_sqrt = spd_spectral_map(&h, "weight matrix inverse square root", |x| {
            1.0 / x.sqrt()
        })?;
        let (min_eig, max_eig) = sym_eig_range(&h);
        let resid = (&inv_sqrt * &h * &inv_sqrt - DMatrix::identity(h.nrows(), h.nrows())).norm();
        if resid > 1e-10 * max_eig.max(1.0) {
            return Err(GviError::NotSpd {
                context: format!("inverse square root residual {resid:.3e}"),
                min_eig,
            });
        }
        Ok(WeightMatrix {
            h,
            sqrt,
            inv_sqrt,
            min_eig,
            max_eig,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let eye = DMatrix::identity(dim, dim);
        WeightMatrix {
            h: eye.clone(),
            sqrt: eye.clone(),
            inv_sqrt: eye,
            min_eig: 1.0,
            max_eig: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eig
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.max_eig
    }

    /// `|x|_H = sqrt(xᵀ H x)`.
    pub fn vector_norm(&self, x: &DVector<f64>) -> f64 {
        (x.dot(&(&self.h * x))).max(0.0).sqrt()
    }
}
