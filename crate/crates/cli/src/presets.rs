//! Built-in experiment presets: bottom topography, initial data, domain,
//! basis, and solver defaults for each benchmark configuration.

use std::sync::Arc;

use sgswe::pce::BetaDim;
use sgswe::scheme::{BcSpec, Scheme, SourceKind};

/// Scalar field of space and the random parameter.
pub type FieldFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// Initial water surface, velocities, and bottom topography.
#[derive(Clone)]
pub struct PresetFields {
    pub w: FieldFn,
    pub u: FieldFn,
    pub v: FieldFn,
    pub bottom: FieldFn,
}

impl std::fmt::Debug for PresetFields {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PresetFields { .. }")
    }
}

/// One named experiment configuration.
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub scheme: Scheme,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub mesh: (usize, usize),
    pub basis: Vec<BetaDim>,
    pub g: f64,
    pub bc: BcSpec,
    pub t_end: f64,
    pub snapshots: Vec<f64>,
    pub source: SourceKind,
    /// Constant reference surface for lake-at-rest deviation tracking.
    pub wb_reference: Option<f64>,
    pub fields: PresetFields,
}

fn uniform_dims(order: usize) -> Vec<BetaDim> {
    vec![BetaDim {
        alpha: 0.0,
        beta: 0.0,
        order,
    }]
}

fn constant(c: f64) -> FieldFn {
    Arc::new(move |_, _, _| c)
}

/// Hump on a stochastic offset bottom, deterministic uniform flow; the
/// accuracy-test configuration.
fn accuracy_hump() -> Preset {
    Preset {
        name: "sec5_1_accuracy",
        description: "uniform flow over an elliptic hump with random bottom offset (accuracy test)",
        scheme: Scheme::Ec,
        x_range: (0.0, 2.0),
        y_range: (0.0, 1.0),
        mesh: (100, 100),
        basis: uniform_dims(2),
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 0.07,
        snapshots: vec![0.07],
        source: SourceKind::WellBalanced,
        wb_reference: None,
        fields: PresetFields {
            w: constant(1.0),
            u: constant(0.3),
            v: constant(0.0),
            bottom: Arc::new(|x, y, xi| {
                0.5 * (-25.0 * (x - 1.0).powi(2) - 50.0 * (y - 0.5).powi(2)).exp()
                    + 0.1 * (xi[0] + 1.0)
            }),
        },
    }
}

fn surface_strip(x: f64, amplitude: f64) -> f64 {
    if 0.05 < x && x < 0.15 {
        1.0 + amplitude
    } else {
        1.0
    }
}

fn hump_stochastic_bottom() -> Preset {
    Preset {
        name: "sec5_2_hump_stochastic_bottom",
        description: "dam-break strip over a Gaussian hump at a random position",
        scheme: Scheme::Es2,
        x_range: (0.0, 2.0),
        y_range: (0.0, 1.0),
        mesh: (200, 200),
        basis: uniform_dims(4),
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 1.8,
        snapshots: vec![0.6, 0.9, 1.2, 1.5, 1.8],
        source: SourceKind::WellBalanced,
        wb_reference: None,
        fields: PresetFields {
            w: Arc::new(|x, _, _| surface_strip(x, 0.01)),
            u: constant(0.0),
            v: constant(0.0),
            bottom: Arc::new(|x, y, xi| {
                0.8 * (-5.0 * (x - 0.9 + 0.1 * xi[0]).powi(2) - 50.0 * (y - 0.5).powi(2)).exp()
            }),
        },
    }
}

fn hump_stochastic_surface() -> Preset {
    Preset {
        name: "sec5_3_hump_stochastic_surface",
        description: "random-amplitude dam-break strip over a deterministic Gaussian hump",
        scheme: Scheme::Es2,
        x_range: (0.0, 2.0),
        y_range: (0.0, 1.0),
        mesh: (200, 200),
        basis: uniform_dims(4),
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 1.8,
        snapshots: vec![0.6, 0.9, 1.2, 1.5, 1.8],
        source: SourceKind::WellBalanced,
        wb_reference: None,
        fields: PresetFields {
            w: Arc::new(|x, _, xi| {
                if 0.05 < x && x < 0.15 {
                    1.0 + 0.01 * (xi[0] + 1.0)
                } else {
                    1.0
                }
            }),
            u: constant(0.0),
            v: constant(0.0),
            bottom: Arc::new(|x, y, _| {
                0.8 * (-5.0 * (x - 0.9).powi(2) - 50.0 * (y - 0.5).powi(2)).exp()
            }),
        },
    }
}

fn plateau_bottom(x: f64, y: f64, xi: &[f64]) -> f64 {
    let r = (x * x + y * y).sqrt() + 1e-4;
    if r <= 0.1 {
        0.9998
    } else if r <= 0.2 {
        9.997 * (0.2 - r) + 1e-4 * (xi[0] + 1.0)
    } else {
        1e-4
    }
}

fn plateau_preset(name: &'static str, description: &'static str, perturbation: f64) -> Preset {
    Preset {
        name,
        description,
        scheme: Scheme::Es2,
        x_range: (-0.5, 0.5),
        y_range: (-0.5, 0.5),
        mesh: (200, 200),
        basis: uniform_dims(4),
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 0.65,
        snapshots: vec![0.2, 0.35, 0.5, 0.65],
        source: SourceKind::WellBalanced,
        wb_reference: Some(1.0),
        fields: PresetFields {
            w: Arc::new(move |x, _, _| {
                if -0.4 < x && x < -0.3 {
                    1.0 + perturbation
                } else {
                    1.0
                }
            }),
            u: constant(0.0),
            v: constant(0.0),
            bottom: Arc::new(plateau_bottom),
        },
    }
}

fn lake_perturb_bottom(first_amplitude: f64) -> FieldFn {
    Arc::new(move |x, y, _| {
        let p = x * y;
        if -0.55 < p && p < -0.15 {
            first_amplitude * ((5.0 * std::f64::consts::PI * (p + 0.35)).cos() + 1.0)
        } else if 0.25 < p && p < 0.45 {
            0.125 * ((10.0 * std::f64::consts::PI * (p - 0.35)).cos() + 1.0)
        } else {
            0.0
        }
    })
}

fn lake_perturb_preset(
    name: &'static str,
    description: &'static str,
    first_amplitude: f64,
    source: SourceKind,
) -> Preset {
    Preset {
        name,
        description,
        scheme: Scheme::Es2,
        x_range: (-1.0, 1.0),
        y_range: (-1.0, 1.0),
        mesh: (200, 200),
        basis: uniform_dims(4),
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 0.8,
        snapshots: vec![0.2, 0.4, 0.6, 0.8],
        source,
        wb_reference: Some(1.0),
        fields: PresetFields {
            w: Arc::new(|x, y, xi| {
                if (x * y).abs() <= 0.05 {
                    1.0 + 0.001 * (xi[0] + 1.0)
                } else {
                    1.0
                }
            }),
            u: constant(0.0),
            v: constant(0.0),
            bottom: lake_perturb_bottom(first_amplitude),
        },
    }
}

fn bivariate_hump() -> Preset {
    Preset {
        name: "sec5_6_bivariate",
        description: "uniform flow over a hump with independent random widths in x and y",
        scheme: Scheme::Es2,
        x_range: (0.0, 2.0),
        y_range: (0.0, 1.0),
        mesh: (100, 100),
        basis: vec![
            BetaDim {
                alpha: 3.0,
                beta: 1.0,
                order: 3,
            },
            BetaDim {
                alpha: 0.0,
                beta: 0.0,
                order: 3,
            },
        ],
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 0.07,
        snapshots: vec![0.07],
        source: SourceKind::WellBalanced,
        wb_reference: None,
        fields: PresetFields {
            w: constant(1.0),
            u: constant(0.3),
            v: constant(0.0),
            bottom: Arc::new(|x, y, xi| {
                0.5 * (-12.5 * (xi[0] + 1.0) * (x - 1.0).powi(2)
                    - 25.0 * (xi[1] + 1.0) * (y - 0.5).powi(2))
                .exp()
            }),
        },
    }
}

fn demo_1d() -> Preset {
    Preset {
        name: "demo1d_augmented_energy",
        description: "1D ramp inflow demo separating boundary energy influx from scheme dissipation",
        scheme: Scheme::Ec,
        x_range: (0.0, 2.0),
        y_range: (0.0, 1.0),
        mesh: (200, 1),
        basis: uniform_dims(4),
        g: 1.0,
        bc: BcSpec::channel(),
        t_end: 0.07,
        snapshots: vec![0.07],
        source: SourceKind::WellBalanced,
        wb_reference: None,
        fields: PresetFields {
            w: constant(1.0),
            u: constant(0.3),
            v: constant(0.0),
            bottom: Arc::new(|x, _, _| {
                if x < 0.5 {
                    0.0
                } else if x <= 1.5 {
                    0.1 * x - 0.05
                } else {
                    0.1
                }
            }),
        },
    }
}

/// Look up a preset by name.
pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "sec5_1_accuracy" => accuracy_hump(),
        "sec5_2_hump_stochastic_bottom" => hump_stochastic_bottom(),
        "sec5_3_hump_stochastic_surface" => hump_stochastic_surface(),
        "sec5_4_plateau" => plateau_preset(
            "sec5_4_plateau",
            "small perturbation over a submerged flat plateau (well-balanced)",
            1e-4,
        ),
        "sec5_4_plateau_rest" => plateau_preset(
            "sec5_4_plateau_rest",
            "exact lake-at-rest over the submerged plateau",
            0.0,
        ),
        "sec5_4_nonwb" => {
            let mut p = plateau_preset(
                "sec5_4_nonwb",
                "plateau perturbation with the central-difference (non-well-balanced) source",
                1e-4,
            );
            p.source = SourceKind::CentralDifference;
            p.mesh = (50, 50);
            p
        }
        "sec5_5_lake_perturb" => lake_perturb_preset(
            "sec5_5_lake_perturb",
            "random perturbation to lake-at-rest over cosine bumps",
            0.25,
            SourceKind::WellBalanced,
        ),
        "sec5_5_lake_perturb_b2" => lake_perturb_preset(
            "sec5_5_lake_perturb_b2",
            "lake-at-rest perturbation over the taller first cosine bump",
            0.45,
            SourceKind::WellBalanced,
        ),
        "sec5_5_nonwb" => {
            let mut p = lake_perturb_preset(
                "sec5_5_nonwb",
                "lake-at-rest perturbation with the central-difference source",
                0.25,
                SourceKind::CentralDifference,
            );
            p.mesh = (50, 50);
            p
        }
        "sec5_6_bivariate" => bivariate_hump(),
        "demo1d_augmented_energy" => demo_1d(),
        _ => return None,
    };
    Some(p)
}

/// All preset names with one-line descriptions, in listing order.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    [
        "sec5_1_accuracy",
        "sec5_2_hump_stochastic_bottom",
        "sec5_3_hump_stochastic_surface",
        "sec5_4_plateau",
        "sec5_4_plateau_rest",
        "sec5_4_nonwb",
        "sec5_5_lake_perturb",
        "sec5_5_lake_perturb_b2",
        "sec5_5_nonwb",
        "sec5_6_bivariate",
        "demo1d_augmented_energy",
    ]
    .iter()
    .map(|name| {
        let p = preset(name).expect("catalog names resolve");
        (p.name, p.description)
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_consistent() {
        let names = catalog();
        assert!(names.len() >= 10);
        for (name, desc) in names {
            assert!(preset(name).is_some());
            assert!(!desc.is_empty());
        }
        assert!(preset("nonexistent").is_none());
    }

    #[test]
    fn plateau_stays_wet() {
        let p = preset("sec5_4_plateau").unwrap();
        for &xi in &[-1.0, 0.0, 1.0] {
            for i in 0..100 {
                let x = -0.5 + i as f64 * 0.01;
                let b = (p.fields.bottom)(x, 0.0, &[xi]);
                let w = (p.fields.w)(x, 0.0, &[xi]);
                assert!(w - b > 0.0, "dry at x = {x}, xi = {xi}");
            }
        }
    }

    #[test]
    fn demo_bottom_is_the_ramp() {
        let p = preset("demo1d_augmented_energy").unwrap();
        let b = &p.fields.bottom;
        assert_eq!(b(0.2, 0.0, &[0.0]), 0.0);
        assert!((b(1.0, 0.0, &[0.0]) - 0.05).abs() < 1e-15);
        assert_eq!(b(1.8, 0.0, &[0.0]), 0.1);
    }
}
