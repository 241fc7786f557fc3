//! Run configuration: strict JSON parsing, preset merging, CLI overrides,
//! and validation that reports every violation at once.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use sgswe::integrator::StepControls;
use sgswe::pce::{BetaDim, MeasureSpec};
use sgswe::scheme::{BcSpec, Boundary, Mesh, Scheme, SchemeConfig, SourceKind};

use crate::expr::Expr;
use crate::presets::{self, FieldFn, PresetFields};

/// Raw configuration file contents; unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: Option<String>,
    pub scheme: Option<String>,
    pub mesh: Option<RawMesh>,
    pub domain: Option<RawDomain>,
    pub basis: Option<Vec<RawDim>>,
    pub g: Option<f64>,
    pub controls: Option<RawControls>,
    pub bc: Option<RawBc>,
    pub t_end: Option<f64>,
    pub snapshot_times: Option<Vec<f64>>,
    pub output_dir: Option<String>,
    pub source: Option<String>,
    pub initial: Option<RawInitial>,
    pub dump_coefficients: Option<bool>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMesh {
    pub mx: usize,
    pub my: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDomain {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDim {
    pub alpha: f64,
    pub beta: f64,
    pub order: usize,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawControls {
    pub cfl: Option<f64>,
    pub hyperbolicity_safety: Option<f64>,
    pub desing_eps: Option<f64>,
    pub dt_min: Option<f64>,
    pub max_halvings: Option<u32>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBc {
    pub left: String,
    pub right: String,
    pub bottom: String,
    pub top: String,
}

/// Inline initial data as expressions of `x`, `y`, `xi1`, `xi2`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInitial {
    pub w: Option<String>,
    pub u: Option<String>,
    pub v: Option<String>,
    pub bottom: Option<String>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub scheme: Option<String>,
    pub mesh: Option<(usize, usize)>,
    pub t_end: Option<f64>,
    pub output_dir: Option<String>,
    pub dump_coefficients: bool,
}

/// A fully validated run configuration.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub preset_name: Option<String>,
    pub scheme: Scheme,
    pub mesh: Mesh,
    pub measure: MeasureSpec,
    pub g: f64,
    pub controls: StepControls,
    pub desing_eps: f64,
    pub bc: BcSpec,
    pub t_end: f64,
    pub snapshots: Vec<f64>,
    pub output_dir: PathBuf,
    pub source: SourceKind,
    pub wb_reference: Option<f64>,
    pub fields: PresetFields,
    pub dump_coefficients: bool,
}

impl ResolvedConfig {
    pub fn scheme_config(&self) -> SchemeConfig {
        let mut sc = SchemeConfig::new(self.scheme);
        sc.g = self.g;
        sc.desing_eps = self.desing_eps;
        sc.source = self.source;
        sc
    }

    pub fn basis_size(&self) -> usize {
        self.measure.basis_size()
    }

    /// Clone of this configuration on an `m x m` mesh, for convergence runs.
    pub fn with_square_mesh(&self, m: usize, output_dir: PathBuf) -> ResolvedConfig {
        let mut mesh = self.mesh;
        mesh.mx = m;
        mesh.my = m;
        ResolvedConfig {
            mesh,
            preset_name: self.preset_name.clone(),
            measure: self.measure.clone(),
            controls: self.controls.clone(),
            snapshots: vec![self.t_end],
            output_dir,
            fields: self.fields.clone(),
            scheme: self.scheme,
            g: self.g,
            desing_eps: self.desing_eps,
            bc: self.bc,
            t_end: self.t_end,
            source: self.source,
            wb_reference: self.wb_reference,
            dump_coefficients: false,
        }
    }
}

/// Read and strictly parse a config file.
pub fn load(path: &Path) -> Result<RawConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s.to_ascii_uppercase().as_str() {
        "EC" => Ok(Scheme::Ec),
        "ES1" => Ok(Scheme::Es1),
        "ES2" => Ok(Scheme::Es2),
        other => Err(format!("unknown scheme '{other}' (expected EC, ES1, or ES2)")),
    }
}

fn parse_boundary(s: &str) -> Result<Boundary, String> {
    match s.to_ascii_lowercase().as_str() {
        "periodic" => Ok(Boundary::Periodic),
        "outflow" => Ok(Boundary::Outflow),
        other => Err(format!(
            "unknown boundary '{other}' (expected periodic or outflow)"
        )),
    }
}

fn parse_source(s: &str) -> Result<SourceKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "well_balanced" => Ok(SourceKind::WellBalanced),
        "central_difference" => Ok(SourceKind::CentralDifference),
        other => Err(format!(
            "unknown source '{other}' (expected well_balanced or central_difference)"
        )),
    }
}

fn expr_field(src: &str, what: &str, errors: &mut Vec<String>) -> Option<FieldFn> {
    match Expr::parse(src) {
        Ok(expr) => Some(Arc::new(move |x, y, xi| expr.eval(x, y, xi))),
        Err(e) => {
            errors.push(format!("initial.{what}: {e}"));
            None
        }
    }
}

/// Merge preset defaults, file values, and CLI overrides into a validated
/// configuration. All violations are reported together.
pub fn resolve(raw: RawConfig, overrides: Overrides) -> Result<ResolvedConfig, String> {
    let mut errors: Vec<String> = Vec::new();

    let preset_name = overrides.preset.clone().or(raw.preset.clone());
    let preset = match &preset_name {
        Some(name) => match presets::preset(name) {
            Some(p) => Some(p),
            None => {
                let known: Vec<&str> = presets::catalog().iter().map(|(n, _)| *n).collect();
                errors.push(format!(
                    "unknown preset '{name}' (known: {})",
                    known.join(", ")
                ));
                None
            }
        },
        None => None,
    };

    let scheme = match overrides
        .scheme
        .as_deref()
        .or(raw.scheme.as_deref())
        .map(parse_scheme)
    {
        Some(Ok(s)) => Some(s),
        Some(Err(e)) => {
            errors.push(e);
            None
        }
        None => preset.as_ref().map(|p| p.scheme),
    };
    if scheme.is_none() && preset.is_none() {
        errors.push("missing key: scheme".into());
    }

    let (mx, my) = overrides
        .mesh
        .or(raw.mesh.map(|m| (m.mx, m.my)))
        .or(preset.as_ref().map(|p| p.mesh))
        .unwrap_or((0, 0));
    if mx == 0 || my == 0 {
        errors.push("mesh: mx and my must be positive (missing key: mesh?)".into());
    }

    let domain = raw
        .domain
        .map(|d| ((d.x[0], d.x[1]), (d.y[0], d.y[1])))
        .or(preset.as_ref().map(|p| (p.x_range, p.y_range)));
    let (x_range, y_range) = match domain {
        Some(d) => d,
        None => {
            errors.push("missing key: domain".into());
            ((0.0, 1.0), (0.0, 1.0))
        }
    };
    if x_range.1 <= x_range.0 || y_range.1 <= y_range.0 {
        errors.push(format!(
            "domain ranges must be increasing, got x = {x_range:?}, y = {y_range:?}"
        ));
    }

    let dims: Vec<BetaDim> = raw
        .basis
        .map(|dims| {
            dims.iter()
                .map(|d| BetaDim {
                    alpha: d.alpha,
                    beta: d.beta,
                    order: d.order,
                })
                .collect()
        })
        .or(preset.as_ref().map(|p| p.basis.clone()))
        .unwrap_or_else(|| {
            errors.push("missing key: basis".into());
            vec![BetaDim {
                alpha: 0.0,
                beta: 0.0,
                order: 1,
            }]
        });
    for (i, d) in dims.iter().enumerate() {
        if !(d.alpha > -1.0) || !(d.beta > -1.0) {
            errors.push(format!(
                "basis[{i}]: alpha and beta must be > -1, got ({}, {})",
                d.alpha, d.beta
            ));
        }
        if d.order < 1 {
            errors.push(format!("basis[{i}]: order must be at least 1"));
        }
    }

    let g = raw.g.or(preset.as_ref().map(|p| p.g)).unwrap_or(1.0);
    if !(g > 0.0) {
        errors.push(format!("g = {g} must be positive"));
    }

    let rc = raw.controls.unwrap_or_default();
    let mut controls = StepControls::default();
    if let Some(cfl) = rc.cfl {
        controls.cfl = cfl;
    }
    if let Some(s) = rc.hyperbolicity_safety {
        controls.hyperbolicity_safety = s;
    }
    if let Some(d) = rc.dt_min {
        controls.dt_min = d;
    }
    if let Some(m) = rc.max_halvings {
        controls.max_halvings = m;
    }
    if !(controls.cfl > 0.0 && controls.cfl <= 1.0) {
        errors.push(format!("controls.cfl = {} must lie in (0, 1]", controls.cfl));
    }
    if !(controls.hyperbolicity_safety > 0.0 && controls.hyperbolicity_safety < 1.0) {
        errors.push(format!(
            "controls.hyperbolicity_safety = {} must lie in (0, 1)",
            controls.hyperbolicity_safety
        ));
    }
    if !(controls.dt_min > 0.0) {
        errors.push("controls.dt_min must be positive".into());
    }
    let desing_eps = rc.desing_eps.unwrap_or(1e-6);
    if !(desing_eps > 0.0) {
        errors.push("controls.desing_eps must be positive".into());
    }

    let bc = match raw.bc {
        Some(rb) => {
            let mut side = |name: &str, value: &str| match parse_boundary(value) {
                Ok(b) => b,
                Err(e) => {
                    errors.push(format!("bc.{name}: {e}"));
                    Boundary::Periodic
                }
            };
            BcSpec {
                left: side("left", &rb.left),
                right: side("right", &rb.right),
                bottom: side("bottom", &rb.bottom),
                top: side("top", &rb.top),
            }
        }
        None => preset
            .as_ref()
            .map(|p| p.bc)
            .unwrap_or_else(BcSpec::channel),
    };
    if bc.validate().is_err() {
        errors.push("bc: periodic boundaries must be paired on opposite sides".into());
    }

    let t_end = overrides
        .t_end
        .or(raw.t_end)
        .or(preset.as_ref().map(|p| p.t_end));
    let t_end = match t_end {
        Some(t) if t >= 0.0 => t,
        Some(t) => {
            errors.push(format!("t_end = {t} must be non-negative"));
            0.0
        }
        None => {
            errors.push("missing key: t_end".into());
            0.0
        }
    };

    // Explicit snapshot times are validated strictly; preset defaults are
    // filtered so a shortened --tend still works.
    let snapshots = match raw.snapshot_times {
        Some(times) => {
            for &s in &times {
                if s < 0.0 || s > t_end {
                    errors.push(format!("snapshot time {s} outside [0, {t_end}]"));
                }
            }
            times
        }
        None => match preset.as_ref() {
            Some(p) => {
                let mut times: Vec<f64> =
                    p.snapshots.iter().copied().filter(|&s| s <= t_end).collect();
                if times.is_empty() {
                    times.push(t_end);
                }
                times
            }
            None => vec![t_end],
        },
    };

    let output_dir = PathBuf::from(
        overrides
            .output_dir
            .or(raw.output_dir)
            .unwrap_or_else(|| "out".into()),
    );

    let source = match raw.source.as_deref().map(parse_source) {
        Some(Ok(s)) => s,
        Some(Err(e)) => {
            errors.push(e);
            SourceKind::WellBalanced
        }
        None => preset
            .as_ref()
            .map(|p| p.source)
            .unwrap_or(SourceKind::WellBalanced),
    };

    // Initial data: inline expressions override preset fields per component.
    let raw_initial = raw.initial.unwrap_or_default();
    let inline_w = raw_initial
        .w
        .as_deref()
        .and_then(|s| expr_field(s, "w", &mut errors));
    let inline_u = raw_initial
        .u
        .as_deref()
        .and_then(|s| expr_field(s, "u", &mut errors));
    let inline_v = raw_initial
        .v
        .as_deref()
        .and_then(|s| expr_field(s, "v", &mut errors));
    let inline_b = raw_initial
        .bottom
        .as_deref()
        .and_then(|s| expr_field(s, "bottom", &mut errors));
    let fields = match preset {
        Some(p) => {
            let pf = p.fields;
            PresetFields {
                w: inline_w.unwrap_or(pf.w),
                u: inline_u.unwrap_or(pf.u),
                v: inline_v.unwrap_or(pf.v),
                bottom: inline_b.unwrap_or(pf.bottom),
            }
        }
        None => {
            if raw_initial.w.is_none() {
                errors.push("missing key: initial.w (no preset selected)".into());
            }
            PresetFields {
                w: inline_w.unwrap_or_else(|| Arc::new(|_, _, _| 1.0)),
                u: inline_u.unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
                v: inline_v.unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
                bottom: inline_b.unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
            }
        }
    };
    let wb_reference = preset_wb_reference(&preset_name);

    if !errors.is_empty() {
        return Err(errors.join("; "));
    }

    Ok(ResolvedConfig {
        preset_name,
        scheme: scheme.expect("validated"),
        mesh: Mesh::new(mx, my, x_range, y_range),
        measure: MeasureSpec { dims },
        g,
        controls,
        desing_eps,
        bc,
        t_end,
        snapshots,
        output_dir,
        source,
        wb_reference,
        fields,
        dump_coefficients: overrides.dump_coefficients || raw.dump_coefficients.unwrap_or(false),
    })
}

fn preset_wb_reference(name: &Option<String>) -> Option<f64> {
    name.as_deref()
        .and_then(presets::preset)
        .and_then(|p| p.wb_reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_json(json: &str, overrides: Overrides) -> Result<ResolvedConfig, String> {
        let raw: RawConfig = serde_json::from_str(json).map_err(|e| e.to_string())?;
        resolve(raw, overrides)
    }

    #[test]
    fn preset_with_mesh_override() {
        let cfg = from_json(
            r#"{ "preset": "sec5_4_plateau", "mesh": { "mx": 50, "my": 50 } }"#,
            Overrides::default(),
        )
        .unwrap();
        assert_eq!(cfg.mesh.mx, 50);
        assert_eq!(cfg.mesh.my, 50);
        assert_eq!(cfg.scheme, Scheme::Es2);
        assert_eq!(cfg.basis_size(), 4);
        assert!((cfg.t_end - 0.65).abs() < 1e-15);
        assert!((cfg.mesh.x_min + 0.5).abs() < 1e-15);
        assert_eq!(cfg.wb_reference, Some(1.0));
    }

    #[test]
    fn missing_scheme_is_reported_by_name() {
        let err = from_json(
            r#"{ "mesh": { "mx": 4, "my": 4 }, "domain": { "x": [0, 1], "y": [0, 1] },
                 "basis": [ { "alpha": 0, "beta": 0, "order": 2 } ], "t_end": 0.1,
                 "initial": { "w": "1" } }"#,
            Overrides::default(),
        )
        .unwrap_err();
        assert!(err.contains("scheme"), "error was: {err}");
    }

    #[test]
    fn cfl_out_of_range_is_rejected() {
        let err = from_json(
            r#"{ "preset": "sec5_1_accuracy", "controls": { "cfl": 1.5 } }"#,
            Overrides::default(),
        )
        .unwrap_err();
        assert!(err.contains("cfl"), "error was: {err}");
    }

    #[test]
    fn violations_are_collected() {
        let err = from_json(
            r#"{ "scheme": "EX", "mesh": { "mx": 0, "my": 4 },
                 "domain": { "x": [1, 0], "y": [0, 1] },
                 "basis": [ { "alpha": -2, "beta": 0, "order": 0 } ],
                 "t_end": -1, "initial": { "w": "1" } }"#,
            Overrides::default(),
        )
        .unwrap_err();
        for needle in ["scheme", "mesh", "domain", "alpha", "order", "t_end"] {
            assert!(err.contains(needle), "missing '{needle}' in: {err}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let raw: Result<RawConfig, _> =
            serde_json::from_str(r#"{ "preset": "sec5_1_accuracy", "mysterious": 1 }"#);
        assert!(raw.is_err());
    }

    #[test]
    fn inline_expressions_override_preset_fields() {
        let cfg = from_json(
            r#"{ "preset": "sec5_1_accuracy", "initial": { "u": "0.5" } }"#,
            Overrides::default(),
        )
        .unwrap();
        assert_eq!((cfg.fields.u)(0.3, 0.4, &[0.0]), 0.5);
        // Preset bottom is untouched.
        assert!((cfg.fields.bottom)(1.0, 0.5, &[0.0]) > 0.4);
    }

    #[test]
    fn cli_overrides_beat_file_values() {
        let cfg = from_json(
            r#"{ "preset": "sec5_1_accuracy", "scheme": "ES1", "t_end": 0.5 }"#,
            Overrides {
                scheme: Some("ES2".into()),
                t_end: Some(0.25),
                mesh: Some((10, 20)),
                output_dir: Some("elsewhere".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.scheme, Scheme::Es2);
        assert!((cfg.t_end - 0.25).abs() < 1e-15);
        assert_eq!((cfg.mesh.mx, cfg.mesh.my), (10, 20));
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_expression_is_reported() {
        let err = from_json(
            r#"{ "preset": "sec5_1_accuracy", "initial": { "w": "1 +" } }"#,
            Overrides::default(),
        )
        .unwrap_err();
        assert!(err.contains("initial.w"), "error was: {err}");
    }
}
