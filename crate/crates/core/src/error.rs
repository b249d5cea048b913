use thiserror::Error;

/// Errors raised by the numerical engines.
///
/// Every variant maps to a stable, module-qualified code (see [`Error::code`])
/// that the command-line driver prints and tests can match on.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("matrix is not symmetric: |a_ij - a_ji| = {asymmetry:e} exceeds {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("matrix is not positive definite: pivot {pivot:e} at row {row} is below {tolerance:e}")]
    NotPositiveDefinite { row: usize, pivot: f64, tolerance: f64 },
    #[error("invalid sampling set: {0}")]
    InvalidSamplingSet(String),
    #[error("component index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sampled block covariance is singular")]
    SingularSigmaA,
    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),
    #[error("distortion budget {budget} outside (0, {total}]")]
    BudgetOutOfRange { budget: f64, total: f64 },
    #[error("distortion {delta} is not above the floor {delta_min}; no finite rate achieves it")]
    InfeasibleDistortion { delta: f64, delta_min: f64 },
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("quadrature under-resolved: halving the panel count moved the result by {relative_change:e}")]
    QuadratureUnderResolved { relative_change: f64 },
    #[error("parameter grid has {nodes} nodes, cap is {cap}")]
    GridTooLarge { nodes: usize, cap: usize },
    #[error("ambiguity atom has no members")]
    EmptyAtom,
    #[error("operation requires a prior on the parameter family")]
    NoPrior,
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),
    #[error("{count} subsets exceed the enumeration cap {cap}")]
    TooManySubsets { count: u128, cap: u128 },
    #[error("codebook of 2^{bits} codewords exceeds the cap 2^{cap_bits}")]
    CodebookTooLarge { bits: u32, cap_bits: u32 },
    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
    #[error("LBG training distortion increased from {before:e} to {after:e}")]
    TrainingDiverged { before: f64, after: f64 },
    #[error("estimation grid is empty")]
    EmptyGrid,
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable `module.reason` identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotSquare { .. } => "model.not_square",
            Error::EmptyMatrix => "model.empty_matrix",
            Error::NotSymmetric { .. } => "model.not_symmetric",
            Error::NotPositiveDefinite { .. } => "model.not_positive_definite",
            Error::InvalidSamplingSet(_) => "model.invalid_sampling_set",
            Error::IndexOutOfRange { .. } => "model.index_out_of_range",
            Error::DimensionMismatch { .. } => "srdf.dimension_mismatch",
            Error::SingularSigmaA => "srdf.singular_sigma_a",
            Error::EigenFailure(_) => "srdf.eigen_failure",
            Error::BudgetOutOfRange { .. } => "srdf.budget_out_of_range",
            Error::InfeasibleDistortion { .. } => "srdf.infeasible_distortion",
            Error::Domain(_) => "gmf.domain_error",
            Error::QuadratureUnderResolved { .. } => "gmf.quadrature_under_resolved",
            Error::GridTooLarge { .. } => "universal.grid_too_large",
            Error::EmptyAtom => "universal.empty_atom",
            Error::NoPrior => "universal.no_prior",
            Error::UnsupportedFamily(_) => "universal.unsupported_family",
            Error::TooManySubsets { .. } => "setopt.too_many_subsets",
            Error::CodebookTooLarge { .. } => "simulate.codebook_too_large",
            Error::InvalidSimConfig(_) => "simulate.invalid_config",
            Error::TrainingDiverged { .. } => "simulate.training_diverged",
            Error::EmptyGrid => "simulate.empty_grid",
            Error::Parse(_) => "io.parse",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSigmaA
                | Error::EigenFailure(_)
                | Error::QuadratureUnderResolved { .. }
                | Error::TrainingDiverged { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
