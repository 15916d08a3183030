//! The Jacobi operator `J_f s = Δs − Σ_i g^{ii} R(s, ∂_i f)∂_i f` of a map:
//! strong-form coefficients, the weak second-variation form, and its low spectrum.

mod assembly;
mod eigen;

pub use assembly::{assemble_coefficients, assemble_system, CoefficientFields, JacobiSystem};
pub use eigen::{lowest_eigs, rayleigh, spectrum_report, EigenOptions, EigenPair, SpectrumReport};

/// Relative threshold below which an eigenvalue counts as kernel.
pub const KERNEL_THRESHOLD: f64 = 1e-6;
