//! CSV and JSON artifact writers. Every file starts with a manifest header
//! naming the preset, scheme, basis size, mesh, gravity, and tolerance
//! settings, so outputs are self-describing and diffable.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sgswe::diagnostics::EnergyTrace;
use sgswe::integrator::StepStats;
use sgswe::pce::{mean_std, PceBasis};
use sgswe::scheme::StateField;

use crate::config::ResolvedConfig;

pub fn manifest_header(cfg: &ResolvedConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# sgswe v{}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "# preset={} scheme={} K={} mesh={}x{} domain=[{},{}]x[{},{}] g={}",
        cfg.preset_name.as_deref().unwrap_or("custom"),
        cfg.scheme,
        cfg.basis_size(),
        cfg.mesh.mx,
        cfg.mesh.my,
        cfg.mesh.x_min,
        cfg.mesh.x_max,
        cfg.mesh.y_min,
        cfg.mesh.y_max,
        cfg.g,
    );
    let _ = writeln!(
        s,
        "# cfl={} hyperbolicity_safety={} desing_eps={} dt_min={} source={:?} bc={:?}/{:?}/{:?}/{:?}",
        cfg.controls.cfl,
        cfg.controls.hyperbolicity_safety,
        cfg.desing_eps,
        cfg.controls.dt_min,
        cfg.source,
        cfg.bc.left,
        cfg.bc.right,
        cfg.bc.bottom,
        cfg.bc.top,
    );
    s
}

fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())
}

/// Per-cell mean and standard deviation of the water surface and the mean
/// discharges at one time.
pub fn write_snapshot(
    dir: &Path,
    cfg: &ResolvedConfig,
    basis: &PceBasis,
    field: &StateField,
    t: f64,
) -> std::io::Result<PathBuf> {
    let mut s = manifest_header(cfg);
    let _ = writeln!(s, "# t={t}");
    let _ = writeln!(s, "x,y,mean_w,std_w,mean_qx,mean_qy");
    let mesh = field.mesh;
    for j in 0..mesh.my {
        for i in 0..mesh.mx {
            let (x, y) = mesh.cell_center(i, j);
            let cell = field.cell(i, j);
            let surface = &cell.h + field.bottom_coeffs(i, j);
            let (mean_w, std_w) = mean_std(&surface);
            let _ = writeln!(
                s,
                "{x},{y},{mean_w},{std_w},{},{}",
                cell.qx[0], cell.qy[0]
            );
        }
    }
    let _ = basis;
    let path = dir.join(format!("snapshot_t{t:.4}.csv"));
    write_file(&path, &s)?;
    Ok(path)
}

/// Full coefficient dump of one snapshot (heights, discharges, bottom).
pub fn write_coefficients(
    dir: &Path,
    cfg: &ResolvedConfig,
    field: &StateField,
    t: f64,
) -> std::io::Result<PathBuf> {
    let k = field.k();
    let mut s = manifest_header(cfg);
    let _ = writeln!(s, "# t={t}");
    let mut header = String::from("x,y");
    for block in ["h", "qx", "qy", "b"] {
        for kk in 0..k {
            let _ = write!(header, ",{block}_{kk}");
        }
    }
    let _ = writeln!(s, "{header}");
    let mesh = field.mesh;
    for j in 0..mesh.my {
        for i in 0..mesh.mx {
            let (x, y) = mesh.cell_center(i, j);
            let cell = field.cell(i, j);
            let b = field.bottom_coeffs(i, j);
            let _ = write!(s, "{x},{y}");
            for vec in [&cell.h, &cell.qx, &cell.qy, b] {
                for kk in 0..k {
                    let _ = write!(s, ",{}", vec[kk]);
                }
            }
            let _ = writeln!(s);
        }
    }
    let path = dir.join(format!("coefficients_t{t:.4}.csv"));
    write_file(&path, &s)?;
    Ok(path)
}

/// Energy trace: total energy, relative change, augmented energy, relative
/// augmented change per accepted step.
pub fn write_energy_trace(
    dir: &Path,
    cfg: &ResolvedConfig,
    trace: &EnergyTrace,
) -> std::io::Result<PathBuf> {
    let mut s = manifest_header(cfg);
    let _ = writeln!(s, "t,E,E_rel,E_aug,E_aug_rel");
    let e0 = trace.initial().total_energy;
    let a0 = trace.initial().augmented_energy;
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.t,
            r.total_energy,
            (r.total_energy - e0) / e0,
            r.augmented_energy,
            (r.augmented_energy - a0) / a0,
        );
    }
    let path = dir.join("energy.csv");
    write_file(&path, &s)?;
    Ok(path)
}

/// Convergence table rows: grid size, error, and estimated order (the first
/// grid has none; zero errors flag the order column as degenerate).
pub fn write_convergence_table(
    dir: &Path,
    cfg: &ResolvedConfig,
    rows: &[(usize, f64, Option<String>)],
) -> std::io::Result<PathBuf> {
    let mut s = manifest_header(cfg);
    let _ = writeln!(s, "grid,error,order");
    for (grid, error, order) in rows {
        let _ = writeln!(s, "{grid},{error},{}", order.as_deref().unwrap_or(""));
    }
    let path = dir.join("convergence.csv");
    write_file(&path, &s)?;
    Ok(path)
}

#[derive(Serialize)]
struct ManifestStats {
    steps: usize,
    halvings: usize,
    rhs_evaluations: usize,
    min_dt: f64,
    max_dt: f64,
    min_node_height: f64,
}

#[derive(Serialize)]
struct ManifestResults {
    final_time: f64,
    energy_initial: f64,
    energy_final: f64,
    relative_energy_change: f64,
    relative_augmented_change: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_mean_surface_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_surface_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_discharge_residual: Option<f64>,
}

#[derive(Serialize)]
struct RunManifest {
    version: &'static str,
    preset: String,
    scheme: String,
    basis_size: usize,
    mesh: [usize; 2],
    domain: [[f64; 2]; 2],
    g: f64,
    cfl: f64,
    hyperbolicity_safety: f64,
    desing_eps: f64,
    dt_min: f64,
    t_end: f64,
    source: String,
    stats: ManifestStats,
    results: ManifestResults,
}

/// Machine-readable record of a finished run: configuration, code version,
/// and step statistics.
pub fn write_run_manifest(
    dir: &Path,
    cfg: &ResolvedConfig,
    stats: &StepStats,
    trace: &EnergyTrace,
) -> std::io::Result<PathBuf> {
    let mut wb_mean: Option<f64> = None;
    let mut wb_surface: Option<f64> = None;
    let mut wb_discharge: Option<f64> = None;
    for r in &trace.records {
        if let Some(wb) = &r.wb {
            let m = wb_mean.get_or_insert(0.0);
            *m = m.max(wb.mean_surface);
            let s = wb_surface.get_or_insert(0.0);
            *s = s.max(wb.surface_inf);
            let q = wb_discharge.get_or_insert(0.0);
            *q = q.max(wb.qx_inf.max(wb.qy_inf));
        }
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION"),
        preset: cfg.preset_name.clone().unwrap_or_else(|| "custom".into()),
        scheme: cfg.scheme.to_string(),
        basis_size: cfg.basis_size(),
        mesh: [cfg.mesh.mx, cfg.mesh.my],
        domain: [
            [cfg.mesh.x_min, cfg.mesh.x_max],
            [cfg.mesh.y_min, cfg.mesh.y_max],
        ],
        g: cfg.g,
        cfl: cfg.controls.cfl,
        hyperbolicity_safety: cfg.controls.hyperbolicity_safety,
        desing_eps: cfg.desing_eps,
        dt_min: cfg.controls.dt_min,
        t_end: cfg.t_end,
        source: format!("{:?}", cfg.source),
        stats: ManifestStats {
            steps: stats.steps,
            halvings: stats.halvings,
            rhs_evaluations: stats.rhs_evaluations,
            min_dt: stats.min_dt,
            max_dt: stats.max_dt,
            min_node_height: stats.min_node_height,
        },
        results: ManifestResults {
            final_time: trace.last().t,
            energy_initial: trace.initial().total_energy,
            energy_final: trace.last().total_energy,
            relative_energy_change: trace.relative_energy_change(),
            relative_augmented_change: trace.relative_augmented_change(),
            max_mean_surface_deviation: wb_mean,
            max_surface_residual: wb_surface,
            max_discharge_residual: wb_discharge,
        },
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&path, &text)?;
    Ok(path)
}
