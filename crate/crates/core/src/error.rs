use alloc::string::String;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The policy does not stabilize the system in the mean-square sense, so
    /// its cost is infinite.
    #[error("policy is not mean-square stabilizing (infinite cost) after {iterations} sweeps")]
    NotMsStable { iterations: usize },

    #[error("model is not mean-square stabilizable (Riccati iteration diverged after {iterations} sweeps)")]
    NotMsStabilizable { iterations: usize },

    #[error("fixed-point solve did not converge in {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error(
        "radius estimate not converged after {iterations} iterations (last estimate {estimate})"
    )]
    RadiusNotConverged { estimate: f64, iterations: usize },

    #[error("dense problem of size {size} exceeds the guard of {limit}")]
    DenseGuard { size: usize, limit: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error(
        "finite-difference perturbation of K[{mode}][{row},{col}] left the stabilizing set; reduce h"
    )]
    FdUnstable { mode: usize, row: usize, col: usize },

    #[error("random model generation failed: {0}")]
    Generation(String),
}
