//! Fully discrete evolution: SSP-RK3 with adaptive, positivity-preserving
//! time-step control.
//!
//! Each step obeys two restrictions evaluated at the current state: the
//! positivity bound (height stays positive at every quadrature node under a
//! forward Euler substep) and the wave-speed CFL bound. The three RK stages
//! are convex combinations of forward Euler substeps, so the positivity
//! bound is re-evaluated at each stage input; a violation restarts the whole
//! step with half the step size.

use crate::diagnostics::{
    augmented_energy_rate, well_balance_residual, EnergyTrace, TraceRecord, WbResidual,
};
use crate::error::SgError;
use crate::linalg::sym_eig;
use crate::pce::{Coeffs, PceBasis};
use crate::scheme::{
    semidiscrete_rhs_cached, CacheMode, EsBasisCache, RhsOutput, SchemeConfig, StateField,
};
use crate::system::HeightOperator;
use crate::Result;

/// Adaptive step-size controls.
#[derive(Debug, Clone)]
pub struct StepControls {
    /// CFL number in `(0, 1]`.
    pub cfl: f64,
    /// Fraction of the positivity bound actually used, in `(0, 1)`.
    pub hyperbolicity_safety: f64,
    /// Abort threshold for the step size.
    pub dt_min: f64,
    /// Maximum number of halvings of one step before aborting.
    pub max_halvings: u32,
}

impl Default for StepControls {
    fn default() -> Self {
        StepControls {
            cfl: 0.45,
            hyperbolicity_safety: 0.9,
            dt_min: 1e-13,
            max_halvings: 20,
        }
    }
}

impl StepControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SgError::InvalidMeasure(format!(
                "cfl = {} must lie in (0, 1]",
                self.cfl
            )));
        }
        if !(self.hyperbolicity_safety > 0.0 && self.hyperbolicity_safety < 1.0) {
            return Err(SgError::InvalidMeasure(format!(
                "hyperbolicity_safety = {} must lie in (0, 1)",
                self.hyperbolicity_safety
            )));
        }
        if !(self.dt_min > 0.0) {
            return Err(SgError::InvalidMeasure("dt_min must be positive".into()));
        }
        Ok(())
    }
}

/// Fraction of the positivity-style stiffness budget used when planning a
/// step from the diffusion rate of the current state; stages reject at the
/// looser limit below, both inside the stability region of the integrator.
const STIFFNESS_PLAN_LIMIT: f64 = 1.5;
const STIFFNESS_STAGE_LIMIT: f64 = 2.2;

/// Counters accumulated over a run.
#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub steps: usize,
    pub halvings: usize,
    pub rhs_evaluations: usize,
    pub min_dt: f64,
    pub max_dt: f64,
    /// Smallest node height seen on any accepted state.
    pub min_node_height: f64,
}

/// A finished run: final field, energy trace, and step statistics.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub field: StateField,
    pub trace: EnergyTrace,
    pub stats: StepStats,
}

/// Run options: terminal time, observer times, and optional lake-at-rest
/// reference for deviation tracking.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub t_end: f64,
    /// Times at which the observer fires; `t_end` is always included.
    pub event_times: Vec<f64>,
    /// Reference constant surface for well-balance deviation records.
    pub wb_reference: Option<Coeffs>,
}

impl RunOptions {
    pub fn to_time(t_end: f64) -> Self {
        RunOptions {
            t_end,
            event_times: Vec::new(),
            wb_reference: None,
        }
    }
}

/// Largest admissible forward-Euler step keeping every node height positive,
/// evaluated from the height block of the interface fluxes. Returns infinity
/// when every node divergence vanishes.
pub fn hyperbolicity_dt_bound(
    basis: &PceBasis,
    field: &StateField,
    fluxes: &crate::scheme::InterfaceFluxes,
) -> f64 {
    let mesh = field.mesh;
    let (dx, dy) = (mesh.dx(), mesh.dy());
    let k = field.k();
    let mut bound = f64::INFINITY;
    for j in 0..mesh.my {
        for i in 0..mesh.mx {
            let h = &field.cell(i, j).h;
            let fe = fluxes.fx(i + 1, j);
            let fw = fluxes.fx(i, j);
            let gn = fluxes.gy(i, j + 1);
            let gs = fluxes.gy(i, j);
            for n in 0..basis.quad_len() {
                let mut h_n = 0.0;
                let mut div = 0.0;
                for kk in 0..k {
                    let phi = basis.node_value(n, kk);
                    h_n += phi * h[kk];
                    div += phi * ((fe[kk] - fw[kk]) / dx + (gn[kk] - gs[kk]) / dy);
                }
                if div != 0.0 {
                    bound = bound.min((h_n / div).abs());
                }
            }
        }
    }
    bound
}

/// Wave-speed CFL bound using spectral radii of the per-cell velocity and
/// height operators as the directional speed surrogate (exact for `K = 1`).
pub fn cfl_dt_bound(
    basis: &PceBasis,
    field: &StateField,
    config: &SchemeConfig,
    cfl: f64,
) -> Result<f64> {
    let mesh = field.mesh;
    let mut sx: f64 = 0.0;
    let mut sy: f64 = 0.0;
    for j in 0..mesh.my {
        for i in 0..mesh.mx {
            let state = field.cell(i, j);
            let op = HeightOperator::new(basis, &state.h, config.desing_eps)
                .map_err(|e| e.at_cell(i, j))?;
            let vel = op.velocities(&state.qx, &state.qy);
            let celerity = (config.g * op.spectral_radius()).sqrt();
            let pu = basis.galerkin_matrix(&vel.u);
            let pv = basis.galerkin_matrix(&vel.v);
            let rho_u = spectral_radius_sym(&pu)?;
            let rho_v = spectral_radius_sym(&pv)?;
            sx = sx.max(rho_u + celerity);
            sy = sy.max(rho_v + celerity);
        }
    }
    let bx = if sx > 0.0 { mesh.dx() / sx } else { f64::INFINITY };
    let by = if sy > 0.0 { mesh.dy() / sy } else { f64::INFINITY };
    Ok(cfl * bx.min(by))
}

fn spectral_radius_sym(m: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let eig = sym_eig(m)?;
    Ok(eig.pi[0].abs().max(eig.pi[eig.pi.len() - 1].abs()))
}

/// One SSP-RK3 stage reference on a scalar ODE; the field stepper uses the
/// same stage weights.
pub fn ssp_rk3_scalar_step(rhs: impl Fn(f64) -> f64, u: f64, dt: f64) -> f64 {
    let u1 = u + dt * rhs(u);
    let u2 = 0.75 * u + 0.25 * (u1 + dt * rhs(u1));
    u / 3.0 + 2.0 / 3.0 * (u2 + dt * rhs(u2))
}

/// Forward Euler substep `field + dt * rhs` with refreshed ghosts.
fn euler(field: &StateField, rhs: &RhsOutput, dt: f64) -> StateField {
    let mut out = field.clone();
    let mx = field.mesh.mx;
    for j in 0..field.mesh.my {
        for i in 0..mx {
            let du = &rhs.dudt[j * mx + i];
            let cell = out.cell_mut(i, j);
            cell.h.axpy(dt, &du.h, 1.0);
            cell.qx.axpy(dt, &du.qx, 1.0);
            cell.qy.axpy(dt, &du.qy, 1.0);
        }
    }
    out.apply_bc();
    out
}

enum StageFailure {
    /// Positivity or the stage bound rejected the step; halve and retry.
    Reject,
    /// A non-recoverable error.
    Fatal(SgError),
}

struct AcceptedStep {
    field: StateField,
    next_rhs: RhsOutput,
    next_cache: Option<EsBasisCache>,
    aug_rates: [f64; 3],
}

/// One attempted SSP-RK3 step at fixed `dt`, reusing the stage-1 RHS and
/// the per-step interface eigen bases.
#[allow(clippy::too_many_arguments)]
fn try_step(
    basis: &PceBasis,
    field: &StateField,
    rhs1: &RhsOutput,
    cache: Option<&EsBasisCache>,
    dt: f64,
    config: &SchemeConfig,
    controls: &StepControls,
    stats: &mut StepStats,
) -> std::result::Result<AcceptedStep, StageFailure> {
    let stage_rhs = |f: &StateField, mode: CacheMode<'_>, stats: &mut StepStats| {
        stats.rhs_evaluations += 1;
        match semidiscrete_rhs_cached(basis, f, config, mode) {
            Ok(r) => Ok(r),
            Err(SgError::HyperbolicityLoss { .. }) => Err(StageFailure::Reject),
            Err(e) => Err(StageFailure::Fatal(e)),
        }
    };
    let reuse = || match cache {
        Some(c) => CacheMode::Reuse(c),
        None => CacheMode::Off,
    };
    let check_stage = |f: &StateField, rhs: &RhsOutput| {
        let bound = hyperbolicity_dt_bound(basis, f, &rhs.fluxes);
        dt <= controls.hyperbolicity_safety * bound
            && dt * rhs.max_stiffness <= STIFFNESS_STAGE_LIMIT
    };
    let positive = |f: &StateField| f.min_node_height(basis) > 0.0;

    let r1 = augmented_energy_rate(field, rhs1);
    let u1 = euler(field, rhs1, dt);
    if !positive(&u1) {
        return Err(StageFailure::Reject);
    }
    let (rhs2, _) = stage_rhs(&u1, reuse(), stats)?;
    if !check_stage(&u1, &rhs2) {
        return Err(StageFailure::Reject);
    }
    let r2 = augmented_energy_rate(&u1, &rhs2);

    let mut u2 = euler(&u1, &rhs2, dt);
    u2.combine(0.25, 0.75, field);
    if !positive(&u2) {
        return Err(StageFailure::Reject);
    }
    let (rhs3, _) = stage_rhs(&u2, reuse(), stats)?;
    if !check_stage(&u2, &rhs3) {
        return Err(StageFailure::Reject);
    }
    let r3 = augmented_energy_rate(&u2, &rhs3);

    let mut unext = euler(&u2, &rhs3, dt);
    unext.combine(2.0 / 3.0, 1.0 / 3.0, field);
    if !positive(&unext) {
        return Err(StageFailure::Reject);
    }
    let (next_rhs, next_cache) = stage_rhs(&unext, CacheMode::Build, stats)?;
    Ok(AcceptedStep {
        field: unext,
        next_rhs,
        next_cache,
        aug_rates: [r1, r2, r3],
    })
}

fn trace_record(
    t: f64,
    rhs: &RhsOutput,
    field: &StateField,
    mesh_mx: usize,
    aug: f64,
    wb_reference: &Option<Coeffs>,
) -> TraceRecord {
    let mut left = 0.0;
    let mut right = 0.0;
    for j in 0..field.mesh.my {
        left += rhs.fluxes.hx(0, j);
        right += rhs.fluxes.hx(mesh_mx, j);
    }
    let wb: Option<WbResidual> = wb_reference
        .as_ref()
        .map(|c| well_balance_residual(field, c));
    TraceRecord {
        t,
        total_energy: rhs.total_energy(),
        augmented_energy: aug,
        boundary_flux_left: left,
        boundary_flux_right: right,
        wb,
    }
}

/// Advance a field to `t_end`, firing `on_event` at each requested time (the
/// terminal time included). The returned trace has one record per accepted
/// step.
pub fn run(
    basis: &PceBasis,
    field: StateField,
    config: &SchemeConfig,
    controls: &StepControls,
    options: &RunOptions,
    mut on_event: impl FnMut(f64, &StateField),
) -> Result<RunOutcome> {
    controls.validate()?;
    field.bc.validate()?;
    let mut events: Vec<f64> = options
        .event_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t <= options.t_end)
        .chain(std::iter::once(options.t_end))
        .collect();
    events.sort_by(f64::total_cmp);
    events.dedup();

    let mut field = field;
    field.apply_bc();
    let mut stats = StepStats {
        min_dt: f64::INFINITY,
        min_node_height: f64::INFINITY,
        ..Default::default()
    };
    stats.rhs_evaluations += 1;
    let (mut rhs_cur, mut cache_cur) =
        semidiscrete_rhs_cached(basis, &field, config, CacheMode::Build)?;
    let mut aug = rhs_cur.total_energy();
    let mut trace = EnergyTrace::default();
    trace.push(trace_record(
        0.0,
        &rhs_cur,
        &field,
        field.mesh.mx,
        aug,
        &options.wb_reference,
    ));
    stats.min_node_height = stats.min_node_height.min(field.min_node_height(basis));

    let mut t = 0.0;
    if options.t_end <= 0.0 {
        on_event(t, &field);
        return Ok(RunOutcome {
            field,
            trace,
            stats,
        });
    }

    let mut next_event = 0usize;
    while t < options.t_end {
        let stop = events[next_event];
        let lambda = hyperbolicity_dt_bound(basis, &field, &rhs_cur.fluxes);
        let dt_cfl = cfl_dt_bound(basis, &field, config, controls.cfl)?;
        let dt_diffusion = if rhs_cur.max_stiffness > 0.0 {
            STIFFNESS_PLAN_LIMIT / rhs_cur.max_stiffness
        } else {
            f64::INFINITY
        };
        if std::env::var_os("SGSWE_TRACE_STEPS").is_some() {
            let mut max_rhs = 0.0f64;
            for du in &rhs_cur.dudt {
                max_rhs = max_rhs.max(du.stacked().abs().max());
            }
            eprintln!(
                "t = {t:.6e} lambda = {lambda:.3e} cfl = {dt_cfl:.3e} diff = {dt_diffusion:.3e} max|dU/dt| = {max_rhs:.3e} minh = {:.3e}",
                field.min_node_height(basis)
            );
        }
        let mut dt = (controls.hyperbolicity_safety * lambda)
            .min(dt_cfl)
            .min(dt_diffusion)
            .min(stop - t);
        if !dt.is_finite() {
            dt = stop - t;
        }
        if dt <= 0.0 {
            return Err(SgError::DtUnderflow {
                t,
                dt,
                dt_min: controls.dt_min,
            });
        }

        let mut accepted = None;
        for _ in 0..=controls.max_halvings {
            if dt < controls.dt_min {
                break;
            }
            match try_step(
                basis,
                &field,
                &rhs_cur,
                cache_cur.as_ref(),
                dt,
                config,
                controls,
                &mut stats,
            ) {
                Ok(step) => {
                    accepted = Some(step);
                    break;
                }
                Err(StageFailure::Reject) => {
                    stats.halvings += 1;
                    dt *= 0.5;
                }
                Err(StageFailure::Fatal(e)) => return Err(e),
            }
        }
        let Some(step) = accepted else {
            // Surface the pre-failure state before aborting.
            on_event(t, &field);
            return Err(SgError::DtUnderflow {
                t,
                dt,
                dt_min: controls.dt_min,
            });
        };

        // Augmented energy integrated with the same stage weights as the
        // state.
        let [r1, r2, r3] = step.aug_rates;
        let e1 = aug + dt * r1;
        let e2 = 0.75 * aug + 0.25 * (e1 + dt * r2);
        aug = aug / 3.0 + 2.0 / 3.0 * (e2 + dt * r3);

        let hit_stop = dt >= stop - t - 1e-14 * stop.abs().max(1.0);
        t = if hit_stop { stop } else { t + dt };
        field = step.field;
        rhs_cur = step.next_rhs;
        cache_cur = step.next_cache;

        stats.steps += 1;
        stats.min_dt = stats.min_dt.min(dt);
        stats.max_dt = stats.max_dt.max(dt);
        stats.min_node_height = stats.min_node_height.min(field.min_node_height(basis));
        trace.push(trace_record(
            t,
            &rhs_cur,
            &field,
            field.mesh.mx,
            aug,
            &options.wb_reference,
        ));

        if hit_stop {
            on_event(t, &field);
            next_event += 1;
            if next_event >= events.len() {
                break;
            }
        }
    }

    Ok(RunOutcome {
        field,
        trace,
        stats,
    })
}
