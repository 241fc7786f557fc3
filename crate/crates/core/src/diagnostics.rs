//! Energy accounting, well-balance residuals, error norms, and convergence
//! orders.

use nalgebra::DVector;

use crate::error::SgError;
use crate::pce::{Coeffs, PceBasis};
use crate::scheme::{RhsOutput, StateField};
use crate::system::CellState;
use crate::Result;

/// Deviation of a field from a lake-at-rest reference surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WbResidual {
    /// Max-norm deviation of the surface coefficients `h + B` from the
    /// reference.
    pub surface_inf: f64,
    /// Deviation of just the mean (leading) surface coefficient.
    pub mean_surface: f64,
    pub qx_inf: f64,
    pub qy_inf: f64,
}

/// One accepted-step record of the energy trace.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t: f64,
    pub total_energy: f64,
    /// Total energy corrected by the time-integrated boundary energy fluxes.
    pub augmented_energy: f64,
    /// Sum of the numerical energy fluxes over the left boundary interfaces.
    pub boundary_flux_left: f64,
    pub boundary_flux_right: f64,
    pub wb: Option<WbResidual>,
}

/// Time series of energies over a run; one record per accepted step, the
/// first at `t = 0` with augmented energy equal to the total energy.
#[derive(Debug, Clone, Default)]
pub struct EnergyTrace {
    pub records: Vec<TraceRecord>,
}

impl EnergyTrace {
    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.t > last.t, "trace times must be strictly increasing");
        }
        self.records.push(record);
    }

    pub fn initial(&self) -> &TraceRecord {
        self.records.first().expect("trace is never empty")
    }

    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace is never empty")
    }

    /// Relative change of total energy at the final record.
    pub fn relative_energy_change(&self) -> f64 {
        let e0 = self.initial().total_energy;
        (self.last().total_energy - e0) / e0
    }

    /// Relative change of augmented energy at the final record.
    pub fn relative_augmented_change(&self) -> f64 {
        let e0 = self.initial().augmented_energy;
        (self.last().augmented_energy - e0) / e0
    }
}

/// Total discrete energy: the plain sum of per-cell energies over the
/// interior (no cell-area factor).
pub fn total_energy(basis: &PceBasis, field: &StateField, g: f64, desing_eps: f64) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..field.mesh.my {
        for i in 0..field.mesh.mx {
            let q = crate::system::entropy_quantities(
                basis,
                field.cell(i, j),
                field.bottom_coeffs(i, j),
                g,
                desing_eps,
            )
            .map_err(|e| e.at_cell(i, j))?;
            total += q.energy;
        }
    }
    Ok(total)
}

/// Instantaneous rate of the augmented energy: the interior energy rate
/// plus the boundary energy-flux correction. On periodic sides the boundary
/// sums cancel identically, so the correction is applied unconditionally.
pub fn augmented_energy_rate(field: &StateField, rhs: &RhsOutput) -> f64 {
    let mesh = field.mesh;
    let mut rate = 0.0;
    for cell in 0..mesh.mx * mesh.my {
        rate += rhs.entropy_v[cell].dot(&rhs.dudt[cell].stacked());
    }
    let mut x_boundary = 0.0;
    for j in 0..mesh.my {
        x_boundary += rhs.fluxes.hx(0, j) - rhs.fluxes.hx(mesh.mx, j);
    }
    let mut y_boundary = 0.0;
    for i in 0..mesh.mx {
        y_boundary += rhs.fluxes.ky(i, 0) - rhs.fluxes.ky(i, mesh.my);
    }
    rate - x_boundary / mesh.dx() - y_boundary / mesh.dy()
}

/// Max-norm deviations from a lake-at-rest reference surface `c_ref`.
pub fn well_balance_residual(field: &StateField, c_ref: &Coeffs) -> WbResidual {
    let mut surface_inf = 0.0f64;
    let mut mean_surface = 0.0f64;
    let mut qx_inf = 0.0f64;
    let mut qy_inf = 0.0f64;
    for j in 0..field.mesh.my {
        for i in 0..field.mesh.mx {
            let cell = field.cell(i, j);
            let surface = &cell.h + field.bottom_coeffs(i, j);
            let dev = surface - c_ref;
            surface_inf = surface_inf.max(dev.abs().max());
            mean_surface = mean_surface.max(dev[0].abs());
            qx_inf = qx_inf.max(cell.qx.abs().max());
            qy_inf = qy_inf.max(cell.qy.abs().max());
        }
    }
    WbResidual {
        surface_inf,
        mean_surface,
        qx_inf,
        qy_inf,
    }
}

/// Componentwise sum of the conserved variables over the interior.
pub fn total_conserved(field: &StateField) -> CellState {
    let k = field.k();
    let mut sum = CellState::zeros(k);
    for j in 0..field.mesh.my {
        for i in 0..field.mesh.mx {
            let cell = field.cell(i, j);
            sum.h += &cell.h;
            sum.qx += &cell.qx;
            sum.qy += &cell.qy;
        }
    }
    sum
}

/// Height error of a coarse solution against a reference on a finer grid of
/// the same domain: the reference is restricted by exact block averaging,
/// and per-cell coefficient deviations are measured in the Euclidean norm
/// (the stochastic L2 norm under an orthonormal basis) and summed with the
/// cell-area weight.
pub fn error_norm(coarse: &StateField, fine: &StateField) -> Result<f64> {
    let cm = coarse.mesh;
    let fm = fine.mesh;
    let same_domain = (cm.x_min - fm.x_min).abs() <= 1e-12
        && (cm.x_max - fm.x_max).abs() <= 1e-12
        && (cm.y_min - fm.y_min).abs() <= 1e-12
        && (cm.y_max - fm.y_max).abs() <= 1e-12;
    if !same_domain {
        return Err(SgError::GridMismatch("domains differ".into()));
    }
    if fm.mx % cm.mx != 0 || fm.my % cm.my != 0 {
        return Err(SgError::GridMismatch(format!(
            "fine grid {}x{} is not a multiple of coarse {}x{}",
            fm.mx, fm.my, cm.mx, cm.my
        )));
    }
    if coarse.k() != fine.k() {
        return Err(SgError::GridMismatch("basis sizes differ".into()));
    }
    let rx = fm.mx / cm.mx;
    let ry = fm.my / cm.my;
    let weight = 1.0 / (rx * ry) as f64;
    let area = cm.dx() * cm.dy();
    let mut total = 0.0;
    for j in 0..cm.my {
        for i in 0..cm.mx {
            let mut restricted = DVector::zeros(fine.k());
            for jj in 0..ry {
                for ii in 0..rx {
                    restricted += &fine.cell(i * rx + ii, j * ry + jj).h;
                }
            }
            restricted *= weight;
            total += area * (&coarse.cell(i, j).h - restricted).norm();
        }
    }
    Ok(total)
}

/// Convergence orders `log2(e_k / e_{k+1})` of errors at successively
/// doubled resolutions.
pub fn convergence_orders(errors: &[f64]) -> Result<Vec<f64>> {
    if errors.len() < 2 {
        return Err(SgError::Diagnostics(
            "need at least two errors to estimate an order".into(),
        ));
    }
    if errors.iter().any(|&e| e <= 0.0) {
        return Err(SgError::Diagnostics(
            "errors must be strictly positive".into(),
        ));
    }
    Ok(errors
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .collect())
}
