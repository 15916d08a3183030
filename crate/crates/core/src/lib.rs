//! Numerical laboratory for the harmonic map heat flow from flat compact
//! domains into non-positively curved targets.
//!
//! - [`geometry`]: target manifolds in one global chart.
//! - [`grid`]: discretized source domains and stencils.
//! - [`map`]: discrete maps, sections, tension, energy, `L²` pairing.
//! - [`flow`]: explicit integration of `∂_t f = τ(f)`.
//! - [`jacobi`]: Jacobi operator assembly and its low spectrum.
//! - [`convergence`]: identity checks, rate fits and reports along trajectories.

pub mod convergence;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod jacobi;
pub mod map;

pub use error::{Error, Result};
pub use geometry::TargetManifold;
pub use grid::{DomainGrid, GridSpec};
pub use map::{DiscreteMap, Section};
