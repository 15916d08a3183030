use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("chart violation: {0}")]
    ChartViolation(String),

    #[error("shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("sections are defined over different base maps")]
    BaseMismatch,

    #[error("time step {dt:e} exceeds stability bound {bound:e}")]
    StabilityGuard { dt: f64, bound: f64 },

    #[error("no convergence after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("section vanishes on all interior nodes")]
    ZeroSection,

    #[error("need at least {needed} consecutive snapshots, found {found}")]
    InsufficientSnapshots { needed: usize, found: usize },

    #[error("fit window holds {found} samples, need at least {needed}")]
    EmptyWindow { needed: usize, found: usize },

    #[error("flow not converged: final tension {tension:e} above tolerance {tolerance:e}")]
    NotConverged { tension: f64, tolerance: f64 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
