//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Error, Debug)]
pub enum GviError {
    #[error("tensor order {order} outside the supported range 1..=4")]
    UnsupportedOrder { order: usize },

    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("matrix not symmetric positive definite: {context} (min eigenvalue {min_eig:.3e})")]
    NotSpd { context: String, min_eig: f64 },

    #[error(
        "tensor-product rule would need {nodes} nodes (budget {budget}); switch to monte_carlo"
    )]
    NodeBudget { nodes: u128, budget: u64 },

    #[error("integrand returned a non-finite value at node {node_index}")]
    NonFiniteIntegrand { node_index: usize },

    #[error("invalid argument: {context}")]
    InvalidArgument { context: String },

    #[error("potential is unbounded below along a probed direction (q4 = {value:.3e})")]
    UnboundedBelow { value: f64 },

    #[error("mode search did not converge in {max_iter} iterations (|grad| = {residual:.3e})")]
    ModeNotConverged { max_iter: usize, residual: f64 },

    #[error("Hessian at mode candidate is not positive definite (min eigenvalue {min_eig:.3e})")]
    IndefiniteHessian { min_eig: f64 },

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    SolverDiverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("solver iterate left the admissible region: {context}")]
    RegionViolation { context: String },

    #[error("probe set is empty; cannot estimate growth constants")]
    EmptyProbeSet,

    #[error(
        "boundary mass ratio {ratio:.3e} exceeds 1e-10; enlarge the grid box or its sd multiple"
    )]
    BoundaryMass { ratio: f64 },

    #[error("need at least 3 positive data points for a slope fit, got {remaining}")]
    TooFewPoints { remaining: usize },

    #[error("{failed} of {total} benchmark cells failed (limit 20%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GviError {
    /// Short machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            GviError::UnsupportedOrder { .. } => "unsupported_order",
            GviError::ShapeMismatch { .. } => "shape_mismatch",
            GviError::NotSpd { .. } => "not_spd",
            GviError::NodeBudget { .. } => "node_budget",
            GviError::NonFiniteIntegrand { .. } => "non_finite_integrand",
            GviError::InvalidArgument { .. } => "invalid_argument",
            GviError::UnboundedBelow { .. } => "unbounded_below",
            GviError::ModeNotConverged { .. } => "mode_not_converged",
            GviError::IndefiniteHessian { .. } => "indefinite_hessian",
            GviError::SolverDiverged { .. } => "solver_diverged",
            GviError::RegionViolation { .. } => "region_violation",
            GviError::EmptyProbeSet => "empty_probe_set",
            GviError::BoundaryMass { .. } => "boundary_mass",
            GviError::TooFewPoints { .. } => "too_few_points",
            GviError::TooManyFailures { .. } => "too_many_failures",
            GviError::Io(_) => "io",
            GviError::Json(_) => "json",
        }
    }

    /// Module a given failure originates from, for structured error output.
    pub fn module(&self) -> &'static str {
        match self {
            GviError::UnsupportedOrder { .. } | GviError::ShapeMismatch { .. } => "tensor",
            GviError::NodeBudget { .. } | GviError::NonFiniteIntegrand { .. } => "quadrature",
            GviError::UnboundedBelow { .. }
            | GviError::ModeNotConverged { .. }
            | GviError::IndefiniteHessian { .. }
            | GviError::EmptyProbeSet => "potential",
            GviError::NotSpd { .. }
            | GviError::SolverDiverged { .. }
            | GviError::RegionViolation { .. } => "fit",
            GviError::BoundaryMass { .. } => "oracle",
            GviError::TooFewPoints { .. } => "diagnostics",
            GviError::TooManyFailures { .. } => "bench",
            GviError::InvalidArgument { .. } | GviError::Io(_) | GviError::Json(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, GviError>;
