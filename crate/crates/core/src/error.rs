//! Error types shared across the solver.

use num_complex::Complex64;

/// Errors produced by the numerical kernels and solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// An argument is outside the supported domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation requested at a point where the quantity does not exist
    /// (e.g. the static quasi-periodic Green's function at alpha = 0).
    #[error("singular configuration: {0}")]
    Singular(String),

    /// Invalid crystal or run configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An iterative root search did not converge. Carries the best iterate.
    #[error("no convergence after {iterations} iterations (best |f| = {best_f_abs:.3e} at {best:?})")]
    NonConvergence {
        best: Complex64,
        best_f_abs: f64,
        iterations: usize,
    },

    /// A Bessel function hit a zero in a denominator of the perturbation
    /// operator entries.
    #[error("degenerate frequency: {0}")]
    DegenerateFrequency(String),

    /// The Brillouin-zone quadrature was evaluated at a frequency inside the
    /// band, where the integrand has a pole.
    #[error("quadrature singularity: {0}")]
    QuadratureSingularity(String),

    /// A dense linear solve failed (singular or ill-conditioned matrix).
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// A computed quantity contradicts a structural property it must satisfy
    /// (e.g. a band-edge maximum check or a non-positive curvature fit).
    #[error("inconsistency: {0}")]
    Inconsistency(String),

    /// A scalar equation has no root in the admissible range.
    #[error("no root: {0}")]
    NoRoot(String),
}

pub type Result<T> = std::result::Result<T, Error>;
