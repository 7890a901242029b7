//! JSON-serializable potential descriptions. Dense arrays are row-major.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GaussianPotential, LogisticPosteriorSpec, LogisticPotential, PolynomialPotential, Potential};
use crate::error::{GviError, Result};
use crate::tensor::SymTensor;

/// On-disk description of a potential, tagged by family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialConfig {
    Gaussian {
        d: usize,
        n: f64,
        mean: Vec<f64>,
        /// Row-major d×d covariance.
        cov: Vec<f64>,
    },
    Polynomial {
        d: usize,
        n: f64,
        /// Row-major d×d SPD quadratic part.
        quadratic: Vec<f64>,
        /// Row-major dense d³ cubic tensor (omitted = zero).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cubic: Option<Vec<f64>>,
        /// Row-major dense d⁴ quartic tensor (omitted = zero).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quartic: Option<Vec<f64>>,
    },
    Logistic {
        d: usize,
        n: f64,
        /// Row-major n×d feature matrix.
        x: Vec<f64>,
        /// Labels in {0, 1}.
        y: Vec<u8>,
        /// Row-major d×d prior precision (omitted = flat prior).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior_precision: Option<Vec<f64>>,
    },
}

fn matrix_from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(GviError::ShapeMismatch {
            context: format!("{what}: {} entries for {}x{}", data.len(), rows, cols),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl PotentialConfig {
    pub fn dim(&self) -> usize {
        match self {
            PotentialConfig::Gaussian { d, .. }
            | PotentialConfig::Polynomial { d, .. }
            | PotentialConfig::Logistic { d, .. } => *d,
        }
    }

    /// Builds the concrete potential this config describes.
    pub fn build(&self) -> Result<Box<dyn Potential>> {
        match self {
            PotentialConfig::Gaussian { d, n, mean, cov } => {
                if mean.len() != *d {
                    return Err(GviError::ShapeMismatch {
                        context: format!("mean has {} entries for d = {}", mean.len(), d),
                    });
                }
                let cov = matrix_from_row_major(*d, *d, cov, "covariance")?;
                Ok(Box::new(GaussianPotential::new(
                    DVector::from_column_slice(mean),
                    cov,
                    *n,
                )?))
            }
            PotentialConfig::Polynomial {
                d,
                n,
                quadratic,
                cubic,
                quartic,
            } => {
                let quad = matrix_from_row_major(*d, *d, quadratic, "quadratic part")?;
                let t3 = cubic
                    .as_ref()
                    .map(|c| SymTensor::symmetrize(3, *d, c))
                    .transpose()?;
                let t4 = quartic
                    .as_ref()
                    .map(|c| SymTensor::symmetrize(4, *d, c))
                    .transpose()?;
                Ok(Box::new(PolynomialPotential::new(quad, t3, t4, *n)?))
            }
            PotentialConfig::Logistic {
                d,
                n,
                x,
                y,
                prior_precision,
            } => {
                let rows = y.len();
                if (*n - rows as f64).abs() > 1e-9 {
                    return Err(GviError::InvalidArgument {
                        context: format!("logistic n = {n} does not match {rows} labels"),
                    });
                }
                let features = matrix_from_row_major(rows, *d, x, "features")?;
                let prior = prior_precision
                    .as_ref()
                    .map(|p| matrix_from_row_major(*d, *d, p, "prior precision"))
                    .transpose()?;
                Ok(Box::new(LogisticPotential::new(LogisticPosteriorSpec {
                    features,
                    labels: y.clone(),
                    prior_precision: prior,
                })?))
            }
        }
    }

    /// Config for a logistic data set.
    pub fn from_logistic_spec(spec: &LogisticPosteriorSpec) -> Self {
        let rows = spec.features.nrows();
        let d = spec.features.ncols();
        let x: Vec<f64> = (0..rows)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| spec.features[(i, j)])
            .collect();
        PotentialConfig::Logistic {
            d,
            n: rows as f64,
            x,
            y: spec.labels.clone(),
            prior_precision: spec.prior_precision.as_ref().map(|p| {
                (0..d)
                    .flat_map(|i| (0..d).map(move |j| (i, j)))
                    .map(|(i, j)| p[(i, j)])
                    .collect()
            }),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
