use thiserror::Error;

/// Errors surfaced by every layer of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("computation failed: {0}")]
    Computation(String),

    #[error("feasibility condition {which} violated: lhs {lhs:.6e} > relax * rhs {rhs:.6e}")]
    Infeasible {
        which: &'static str,
        lhs: f64,
        rhs: f64,
    },

    #[error("fixed-point iteration diverged after {iterations} iterations (iterate norm {norm:.3e} exceeds guard {guard:.3e})")]
    Divergence {
        iterations: usize,
        norm: f64,
        guard: f64,
        trace: Vec<f64>,
    },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last step {last_step:.3e})")]
    NonConvergence {
        iterations: usize,
        last_step: f64,
        trace: Vec<f64>,
    },

    #[error("residual check failed: {what} = {value:.3e} exceeds {tol:.1e}")]
    Residual { what: String, value: f64, tol: f64 },

    #[error("structural zero blocks violated: upper-right {upper_right:.3e}, lower input {lower_input:.3e}")]
    StructuralZero { upper_right: f64, lower_input: f64 },

    #[error("no feasible delta found on the search grid (tried relaxation factors up to {max_relaxation}); increase the relaxation factor")]
    NoFeasibleDelta { max_relaxation: f64 },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("resource cap exceeded: {needed} grid nodes requested, cap is {cap}")]
    ResourceCap { needed: u128, cap: u128 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Singular(_) => "singular",
            Error::Computation(_) => "computation",
            Error::Infeasible { .. } => "infeasible",
            Error::Divergence { .. } => "divergence",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Residual { .. } => "residual",
            Error::StructuralZero { .. } => "structural_zero",
            Error::NoFeasibleDelta { .. } => "no_feasible_delta",
            Error::EmptySet(_) => "empty_set",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::ResourceCap { .. } => "resource_cap",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
