//! Error type shared by every stage of the pipeline.

use thiserror::Error;

/// Errors produced by construction, inversion, iteration, and audit routines.
#[derive(Debug, Error)]
pub enum AfredError {
    /// A weight matrix failed the symmetry or positive-definiteness check.
    #[error("weight matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A point left the declared domain (parameter box or domain ball).
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// A singular value fell inside the ambiguity band around the rank
    /// tolerance, so kernel/cokernel dimensions cannot be certified.
    #[error("ambiguous numerical rank: singular value {sigma:.3e} lies within a factor of 10 of the tolerance {tol:.3e}")]
    AmbiguousRank { sigma: f64, tol: f64 },

    /// Direct inversion of a stabilized operator failed.
    #[error("stabilized operator is numerically singular: {0}")]
    SingularStabilization(String),

    /// The operator-series update is not a contraction (‖T‖ ≥ 1).
    #[error("series update is not contractive: ‖T‖ = {t_norm:.6e} ≥ 1")]
    NotContractive { t_norm: f64 },

    /// Fixed-point iteration observed an expansion ratio > 1 inside the ball.
    #[error("fixed-point map is not contracting: observed ratio {ratio:.6e} at iteration {iteration}")]
    NotContracting { ratio: f64, iteration: usize },

    /// Fixed-point iterate left the invariant ball.
    #[error("iterate left the ball of radius {radius:.6e} (norm {norm:.6e}) at iteration {iteration}")]
    LeftBall {
        norm: f64,
        radius: f64,
        iteration: usize,
    },

    /// Iteration hit the step cap without meeting the stopping rule.
    #[error("no convergence after {max_iter} iterations (last step {last_step:.3e})")]
    NoConvergence { max_iter: usize, last_step: f64 },

    /// Two independent evaluation routes differ beyond the allowed slack.
    #[error("independent formulas disagree: difference {difference:.3e} exceeds {limit:.3e}")]
    Disagreement { difference: f64, limit: f64 },

    /// A model constructor was asked for a grid beyond supported size.
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    /// Invalid run configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, AfredError>;
