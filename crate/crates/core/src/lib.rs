//! Finite-volume solvers for the stochastic Galerkin (SG) formulation of the
//! two-dimensional shallow water equations.
//!
//! Random inputs (bottom topography, initial data) are expanded in an
//! orthonormal polynomial chaos basis over a product Beta measure; the
//! Galerkin projection turns the stochastic PDE into a deterministic system
//! for the expansion coefficients. This crate provides
//!
//! * [`pce`] — orthonormal bases, quadrature, and the Galerkin product
//!   operator,
//! * [`linalg`] — small dense eigen/solve kernels used per cell and per
//!   interface,
//! * [`system`] — the SG shallow water fluxes, Jacobians, velocity recovery,
//!   and the energy (entropy) tuple,
//! * [`scheme`] — the semi-discrete finite-volume operator with
//!   energy-conservative (EC) and first/second-order energy-stable
//!   (ES1/ES2) numerical fluxes, all well-balanced,
//! * [`integrator`] — SSP-RK3 time stepping with positivity-preserving
//!   adaptive time-step control,
//! * [`diagnostics`] — energy accounting, well-balance residuals, error
//!   norms, and convergence orders.

pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod pce;
pub mod scheme;
pub mod system;

pub use error::SgError;
pub use pce::{mean_std, Coeffs, MeasureSpec, PceBasis};
pub use scheme::{BcSpec, Boundary, Mesh, Scheme, SchemeConfig, SourceKind, StateField};
pub use system::CellState;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SgError>;
