//! Grid-refinement study: run a configuration on a list of square grids,
//! compare each against a reference solution of the same scheme on a finer
//! grid, and tabulate errors and orders.

use sgswe::diagnostics::error_norm;

use crate::config::ResolvedConfig;
use crate::output;
use crate::runner::{execute, CliError};

pub struct ConvergenceRow {
    pub grid: usize,
    pub error: f64,
    pub order: Option<String>,
}

/// Run `grids` against a reference on `ref_grid`; the reference must be a
/// common multiple of every test grid.
pub fn convergence_study(
    base: &ResolvedConfig,
    grids: &[usize],
    ref_grid: usize,
) -> Result<Vec<ConvergenceRow>, CliError> {
    if grids.is_empty() {
        return Err(CliError::Config("no grids given".into()));
    }
    let mut sorted = grids.to_vec();
    sorted.sort_unstable();
    for &g in &sorted {
        if g == 0 || ref_grid % g != 0 {
            return Err(CliError::Config(format!(
                "reference grid {ref_grid} is not a multiple of test grid {g}"
            )));
        }
    }

    let ref_cfg = base.with_square_mesh(
        ref_grid,
        base.output_dir.join(format!("reference_{ref_grid}")),
    );
    let reference = execute(&ref_cfg)?;

    let mut rows = Vec::with_capacity(sorted.len());
    let mut previous_error: Option<f64> = None;
    for &grid in &sorted {
        let cfg = base.with_square_mesh(grid, base.output_dir.join(format!("grid_{grid}")));
        let solution = execute(&cfg)?;
        let error = error_norm(&solution.outcome.field, &reference.outcome.field)
            .map_err(CliError::Solver)?;
        let order = match previous_error {
            None => None,
            Some(prev) if prev > 0.0 && error > 0.0 => {
                Some(format!("{}", (prev / error).log2()))
            }
            Some(_) => Some("degenerate".to_string()),
        };
        previous_error = Some(error);
        rows.push(ConvergenceRow { grid, error, order });
    }
    Ok(rows)
}

/// Run the study and write the table artifact.
pub fn run_study(
    base: &ResolvedConfig,
    grids: &[usize],
    ref_grid: usize,
) -> Result<Vec<ConvergenceRow>, CliError> {
    let rows = convergence_study(base, grids, ref_grid)?;
    let table: Vec<(usize, f64, Option<String>)> = rows
        .iter()
        .map(|r| (r.grid, r.error, r.order.clone()))
        .collect();
    output::write_convergence_table(&base.output_dir, base, &table)?;
    Ok(rows)
}
