//! Drive one solver run from a resolved configuration: project the initial
//! data, integrate, and write snapshots, the energy trace, and the run
//! manifest.

use std::path::PathBuf;

use nalgebra::DVector;
use sgswe::integrator::{run, RunOptions, RunOutcome};
use sgswe::pce::PceBasis;
use sgswe::scheme::StateField;
use sgswe::system::{CellState, HeightOperator};
use sgswe::SgError;
use thiserror::Error;

use crate::config::ResolvedConfig;
use crate::output;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(#[from] SgError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io(_) => 3,
        }
    }
}

pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub basis: PceBasis,
    pub dir: PathBuf,
}

/// Project the configured initial data onto the chaos basis, cell by cell:
/// midpoint evaluation in space, quadrature projection in the random
/// parameter, discharges made consistent through `q = P(h) u`.
pub fn build_initial_field(cfg: &ResolvedConfig, basis: &PceBasis) -> Result<StateField, CliError> {
    let mesh = cfg.mesh;
    let k = basis.len();
    let mut cells = Vec::with_capacity(mesh.mx * mesh.my);
    for j in 0..mesh.my {
        for i in 0..mesh.mx {
            let (x, y) = mesh.cell_center(i, j);
            let b = basis.project(|xi| (cfg.fields.bottom)(x, y, xi));
            let h = basis.project(|xi| (cfg.fields.w)(x, y, xi) - (cfg.fields.bottom)(x, y, xi));
            let u = basis.project(|xi| (cfg.fields.u)(x, y, xi));
            let v = basis.project(|xi| (cfg.fields.v)(x, y, xi));
            let op = HeightOperator::new(basis, &h, cfg.desing_eps)
                .map_err(|e| CliError::Solver(e.at_cell(i, j)))?;
            let state = CellState {
                qx: &op.p_h * &u,
                qy: &op.p_h * &v,
                h,
            };
            cells.push((state, b));
        }
    }
    let mut iter = cells.into_iter();
    Ok(StateField::build(mesh, cfg.bc, k, |_, _| {
        iter.next().expect("one entry per interior cell")
    }))
}

/// Execute a run and write all artifacts into the configured output
/// directory.
pub fn execute(cfg: &ResolvedConfig) -> Result<RunArtifacts, CliError> {
    let basis = PceBasis::build(cfg.measure.clone()).map_err(CliError::Solver)?;
    let field = build_initial_field(cfg, &basis)?;
    std::fs::create_dir_all(&cfg.output_dir)?;

    let options = RunOptions {
        t_end: cfg.t_end,
        event_times: cfg.snapshots.clone(),
        wb_reference: cfg.wb_reference.map(|c| {
            let mut v = DVector::zeros(basis.len());
            v[0] = c;
            v
        }),
    };
    let mut snapshot_error: Option<std::io::Error> = None;
    let outcome = run(
        &basis,
        field,
        &cfg.scheme_config(),
        &cfg.controls,
        &options,
        |t, f| {
            if snapshot_error.is_some() {
                return;
            }
            if let Err(e) = output::write_snapshot(&cfg.output_dir, cfg, &basis, f, t) {
                snapshot_error = Some(e);
                return;
            }
            if cfg.dump_coefficients {
                if let Err(e) = output::write_coefficients(&cfg.output_dir, cfg, f, t) {
                    snapshot_error = Some(e);
                }
            }
        },
    )
    .map_err(CliError::Solver)?;
    if let Some(e) = snapshot_error {
        return Err(CliError::Io(e));
    }

    output::write_energy_trace(&cfg.output_dir, cfg, &outcome.trace)?;
    output::write_run_manifest(&cfg.output_dir, cfg, &outcome.stats, &outcome.trace)?;
    Ok(RunArtifacts {
        outcome,
        basis,
        dir: cfg.output_dir.clone(),
    })
}
