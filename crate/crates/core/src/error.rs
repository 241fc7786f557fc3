//! Error type shared across the solver.

use thiserror::Error;

/// Errors surfaced by basis construction, dense kernels, and the solver.
#[derive(Debug, Error)]
pub enum SgError {
    /// Invalid measure or basis specification.
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    /// A state left the hyperbolic regime (non-positive water height at a
    /// quadrature node, or a non-real spectrum of a flux Jacobian).
    #[error("hyperbolicity lost{}: {detail}", location_suffix(.cell))]
    HyperbolicityLoss {
        /// Interior cell index `(i, j)` when known, 0-based.
        cell: Option<(usize, usize)>,
        detail: String,
    },

    /// An eigensolver did not converge within its iteration cap.
    #[error("eigensolver failed to converge for a {n}x{n} matrix")]
    EigenFailure { n: usize },

    /// Singular or numerically rank-deficient linear system.
    #[error("singular or ill-conditioned matrix: {0}")]
    SingularMatrix(String),

    /// Incompatible grids in a restriction/error-norm computation.
    #[error("incompatible grids: {0}")]
    GridMismatch(String),

    /// The adaptive step controller shrank `dt` below its abort threshold.
    #[error("time step underflow at t = {t}: dt = {dt} fell below {dt_min}")]
    DtUnderflow { t: f64, dt: f64, dt_min: f64 },

    /// Invalid diagnostic input (e.g. non-positive errors in an order fit).
    #[error("invalid diagnostic input: {0}")]
    Diagnostics(String),
}

fn location_suffix(cell: &Option<(usize, usize)>) -> String {
    match cell {
        Some((i, j)) => format!(" at cell ({i}, {j})"),
        None => String::new(),
    }
}

impl SgError {
    /// Attach an interior cell index to a hyperbolicity-loss error.
    pub fn at_cell(self, i: usize, j: usize) -> Self {
        match self {
            SgError::HyperbolicityLoss { detail, .. } => SgError::HyperbolicityLoss {
                cell: Some((i, j)),
                detail,
            },
            other => other,
        }
    }

    pub(crate) fn hyperbolicity(detail: impl Into<String>) -> Self {
        SgError::HyperbolicityLoss {
            cell: None,
            detail: detail.into(),
        }
    }
}
