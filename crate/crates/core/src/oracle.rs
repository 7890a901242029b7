//! Dense-grid ground truth for π ∝ e^{-V} at d <= 3: normalization, mean,
//! covariance, TV distance, and ∫g dπ by trapezoid sums. The reference every
//! error metric is measured against; refinement (P -> 2P) is the guard on
//! its own accuracy.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{GviError, Result};
use crate::fit::GaussianApprox;
use crate::potential::Potential;
use crate::quadrature::QuadratureRule;
use crate::util::pairwise_sum;

/// Grid oracles are the acceptance authority only at desk scale.
pub const MAX_ORACLE_DIM: usize = 3;

/// Most points allowed in a grid.
pub const MAX_GRID_POINTS: u128 = 100_000_000;

/// Boundary-shell mass may not exceed this fraction of the total.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-10;

/// Default points per axis by dimension (1-, 2-, 3-D).
pub const DEFAULT_POINTS: [usize; 3] = [4096, 1024, 160];

/// Default box half-width in Laplace standard deviations.
pub const DEFAULT_SD_MULTIPLE: f64 = 12.0;

/// A regular box grid: per-axis extents and resolution.
#[derive(Debug, Clone)]
pub struct GridSpec {
    center: DVector<f64>,
    half_widths: DVector<f64>,
    sd_multiple: f64,
    points_per_axis: usize,
}

impl GridSpec {
    pub fn new(center: DVector<f64>, half_widths: DVector<f64>, points_per_axis: usize) -> Result<Self> {
        let d = center.len();
        if d == 0 || d > MAX_ORACLE_DIM {
            return Err(GviError::InvalidArgument {
                context: format!("grid oracle supports 1 <= d <= {MAX_ORACLE_DIM}, got {d} (unverified dimension)"),
            });
        }
        if half_widths.len() != d || half_widths.iter().any(|&w| !(w > 0.0)) {
            return Err(GviError::InvalidArgument {
                context: "half widths must be positive, one per axis".to_string(),
            });
        }
        if points_per_axis < 64 {
            return Err(GviError::InvalidArgument {
                context: format!("need at least 64 points per axis, got {points_per_axis}"),
            });
        }
        let total = (points_per_axis as u128).pow(d as u32);
        if total > MAX_GRID_POINTS {
            return Err(GviError::InvalidArgument {
                context: format!("{total} grid points exceed the {MAX_GRID_POINTS} budget"),
            });
        }
        Ok(GridSpec {
            center,
            half_widths,
            sd_multiple: 1.0,
            points_per_axis,
        })
    }

    /// Box centered at the fit mean extending `sd_multiple` marginal
    /// standard deviations along each axis.
    pub fn from_laplace(approx: &GaussianApprox, sd_multiple: f64, points_per_axis: usize) -> Result<Self> {
        let d = approx.dim();
        let half_widths = DVector::from_fn(d, |i, _| sd_multiple * approx.cov()[(i, i)].sqrt());
        let mut spec = Self::new(approx.mean().clone(), half_widths, points_per_axis)?;
        spec.sd_multiple = sd_multiple;
        Ok(spec)
    }

    /// Default box: 12 standard deviations, dimension-dependent resolution.
    pub fn default_for(approx: &GaussianApprox) -> Result<Self> {
        let d = approx.dim();
        if d == 0 || d > MAX_ORACLE_DIM {
            return Err(GviError::InvalidArgument {
                context: format!("grid oracle supports 1 <= d <= {MAX_ORACLE_DIM}, got {d} (unverified dimension)"),
            });
        }
        Self::from_laplace(approx, DEFAULT_SD_MULTIPLE, DEFAULT_POINTS[d - 1])
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn half_widths(&self) -> &DVector<f64> {
        &self.half_widths
    }

    pub fn sd_multiple(&self) -> f64 {
        self.sd_multiple
    }

    pub fn step(&self, axis: usize) -> f64 {
        2.0 * self.half_widths[axis] / (self.points_per_axis - 1) as f64
    }

    pub fn total_points(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    /// Same box at twice the resolution.
    pub fn refined(&self) -> Result<Self> {
        let mut spec = Self::new(
            self.center.clone(),
            self.half_widths.clone(),
            self.points_per_axis * 2,
        )?;
        spec.sd_multiple = self.sd_multiple;
        Ok(spec)
    }

    fn coordinate(&self, axis: usize, index: usize) -> f64 {
        self.center[axis] - self.half_widths[axis] + self.step(axis) * index as f64
    }

    fn point(&self, flat: usize, out: &mut DVector<f64>) {
        let d = self.dim();
        let mut rem = flat;
        for axis in (0..d).rev() {
            out[axis] = self.coordinate(axis, rem % self.points_per_axis);
            rem /= self.points_per_axis;
        }
    }

    /// Product of per-axis trapezoid coefficients (1/2 at the box faces).
    fn trapezoid_coeff(&self, flat: usize) -> f64 {
        let d = self.dim();
        let mut rem = flat;
        let mut c = 1.0;
        for _ in 0..d {
            let idx = rem % self.points_per_axis;
            if idx == 0 || idx == self.points_per_axis - 1 {
                c *= 0.5;
            }
            rem /= self.points_per_axis;
        }
        c
    }

    fn on_boundary(&self, flat: usize) -> bool {
        let d = self.dim();
        let mut rem = flat;
        for _ in 0..d {
            let idx = rem % self.points_per_axis;
            if idx == 0 || idx == self.points_per_axis - 1 {
                return true;
            }
            rem /= self.points_per_axis;
        }
        false
    }

    fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.step(a)).product()
    }
}

/// Normalization, mean, and covariance of π on a grid.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    /// ∫ e^{-V} dx (zero when it underflows; `log_z` is always finite).
    pub z: f64,
    pub log_z: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Evaluated grid: normalized probability masses over the box, reusable for
/// moments, ∫g dπ, and TV against Gaussian fits.
pub struct GridTable {
    spec: GridSpec,
    prob: Vec<f64>,
    log_z: f64,
}

/// Splits a flat range into per-slab subranges along the leading axis;
/// slab results are combined in axis order so the reduction does not depend
/// on the parallel schedule.
fn slab_ranges(spec: &GridSpec) -> Vec<(usize, usize)> {
    let slab = spec.total_points() / spec.points_per_axis;
    (0..spec.points_per_axis)
        .map(|i| (i * slab, (i + 1) * slab))
        .collect()
}

impl GridTable {
    pub fn build(p: &(impl Potential + ?Sized + Sync), spec: &GridSpec) -> Result<GridTable> {
        if p.dim() != spec.dim() {
            return Err(GviError::ShapeMismatch {
                context: format!("potential dim {} vs grid dim {}", p.dim(), spec.dim()),
            });
        }
        let total = spec.total_points();
        let mut values = vec![0.0f64; total];
        let ranges = slab_ranges(spec);
        let slab = total / spec.points_per_axis;
        values
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(slab_idx, chunk)| {
                let mut x = DVector::zeros(spec.dim());
                let base = slab_idx * slab;
                for (offset, slot) in chunk.iter_mut().enumerate() {
                    spec.point(base + offset, &mut x);
                    *slot = p.total(&x);
                }
            });
        let v_min = values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if !v_min.is_finite() {
            return Err(GviError::InvalidArgument {
                context: "potential evaluated non-finite on the grid".to_string(),
            });
        }
        values.par_iter_mut().enumerate().for_each(|(i, v)| {
            *v = spec.trapezoid_coeff(i) * (-(*v - v_min)).exp();
        });
        let masses = values;

        let slab_sums: Vec<f64> = ranges
            .par_iter()
            .map(|&(lo, hi)| pairwise_sum(&masses[lo..hi]))
            .collect();
        let z_grid = pairwise_sum(&slab_sums);
        if !(z_grid.is_finite() && z_grid > 0.0) {
            return Err(GviError::InvalidArgument {
                context: "grid normalization is degenerate".to_string(),
            });
        }
        let boundary: f64 = masses
            .iter()
            .enumerate()
            .filter(|(i, _)| spec.on_boundary(*i))
            .map(|(_, &m)| m)
            .sum();
        let ratio = boundary / z_grid;
        if ratio > BOUNDARY_MASS_LIMIT {
            return Err(GviError::BoundaryMass { ratio });
        }

        let mut prob = masses;
        prob.par_iter_mut().for_each(|m| *m /= z_grid);
        let log_z = -v_min + z_grid.ln() + (0..spec.dim()).map(|a| spec.step(a).ln()).sum::<f64>();
        Ok(GridTable {
            spec: spec.clone(),
            prob,
            log_z,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// ∫ g dπ (already normalized).
    pub fn integrate(&self, g: impl Fn(&DVector<f64>) -> f64 + Sync) -> f64 {
        let ranges = slab_ranges(&self.spec);
        let slab_sums: Vec<f64> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut x = DVector::zeros(self.spec.dim());
                let vals: Vec<f64> = (lo..hi)
                    .map(|i| {
                        self.spec.point(i, &mut x);
                        self.prob[i] * g(&x)
                    })
                    .collect();
                pairwise_sum(&vals)
            })
            .collect();
        pairwise_sum(&slab_sums)
    }

    /// Normalization, mean, and covariance.
    pub fn moments(&self) -> PosteriorMoments {
        let d = self.spec.dim();
        let mean = DVector::from_fn(d, |i, _| self.integrate(|x| x[i]));
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let c = self.integrate(|x| (x[i] - mean[i]) * (x[j] - mean[j]));
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        PosteriorMoments {
            z: self.log_z.exp(),
            log_z: self.log_z,
            mean,
            cov,
        }
    }

    /// Total variation distance `½ ∫ |π - q|` between the tabulated π and a
    /// Gaussian fit (whose own normalization is analytic).
    pub fn tv(&self, approx: &GaussianApprox) -> f64 {
        let vol = self.spec.cell_volume();
        let ranges = slab_ranges(&self.spec);
        let slab_sums: Vec<f64> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut x = DVector::zeros(self.spec.dim());
                let vals: Vec<f64> = (lo..hi)
                    .map(|i| {
                        self.spec.point(i, &mut x);
                        let gauss = self.spec.trapezoid_coeff(i) * vol * approx.density(&x);
                        (self.prob[i] - gauss).abs()
                    })
                    .collect();
                pairwise_sum(&vals)
            })
            .collect();
        0.5 * pairwise_sum(&slab_sums)
    }
}

/// One-shot ground-truth moments of π on a grid.
pub fn posterior_moments(
    p: &(impl Potential + ?Sized + Sync),
    spec: &GridSpec,
) -> Result<PosteriorMoments> {
    Ok(GridTable::build(p, spec)?.moments())
}

/// One-shot normalized integral ∫ g dπ.
pub fn integrate_g(
    p: &(impl Potential + ?Sized + Sync),
    spec: &GridSpec,
    g: impl Fn(&DVector<f64>) -> f64 + Sync,
) -> Result<f64> {
    Ok(GridTable::build(p, spec)?.integrate(g))
}

/// One-shot TV distance between π and a Gaussian fit.
pub fn tv_distance(
    p: &(impl Potential + ?Sized + Sync),
    approx: &GaussianApprox,
    spec: &GridSpec,
) -> Result<f64> {
    Ok(GridTable::build(p, spec)?.tv(approx))
}

/// `∫ g dπ̂` for the Gaussian fit, by quadrature after the affine change of
/// variables z -> m̂ + S^{1/2} z.
pub fn gaussian_expectation_g(
    approx: &GaussianApprox,
    rule: &QuadratureRule,
    g: impl Fn(&DVector<f64>) -> f64,
) -> Result<f64> {
    if rule.dim() != approx.dim() {
        return Err(GviError::ShapeMismatch {
            context: format!("rule dim {} vs fit dim {}", rule.dim(), approx.dim()),
        });
    }
    rule.expect_scalar(|z| g(&approx.unwhiten(z)))
}

/// Richardson-style consistency check: largest relative change in
/// (log Z, mean, covariance) when the resolution doubles.
pub fn refinement_check(p: &(impl Potential + ?Sized + Sync), spec: &GridSpec) -> Result<f64> {
    let coarse = posterior_moments(p, spec)?;
    let fine = posterior_moments(p, &spec.refined()?)?;
    let mean_scale = fine.mean.norm().max(fine.cov.norm().sqrt());
    let mut worst: f64 = (coarse.log_z - fine.log_z).abs() / fine.log_z.abs().max(1.0);
    worst = worst.max((&coarse.mean - &fine.mean).norm() / mean_scale.max(1e-300));
    worst = worst.max((&coarse.cov - &fine.cov).norm() / fine.cov.norm().max(1e-300));
    Ok(worst)
}
