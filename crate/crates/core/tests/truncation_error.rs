//! Local truncation error of the EC operator on a smooth manufactured
//! field: the semi-discrete RHS must approach the analytic RHS at second
//! order under grid refinement.
//!
//! The analytic RHS is built from the exact flux and source functions with
//! central finite differences in space, an independent path from the
//! interface calculus used by the scheme.

use nalgebra::DVector;
use sgswe::pce::{MeasureSpec, PceBasis};
use sgswe::scheme::{semidiscrete_rhs, BcSpec, Mesh, Scheme, SchemeConfig, StateField};
use sgswe::system::{exact_flux_x, exact_flux_y, source, CellState};

const TAU: f64 = std::f64::consts::TAU;

fn h_hat(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        1.1 + 0.2 * (TAU * x).sin() * (TAU * y).cos(),
        0.05 + 0.03 * (TAU * x).cos(),
    ])
}

fn qx_hat(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        0.2 * (TAU * x).cos() * (TAU * y).sin(),
        0.02 * (TAU * y).sin(),
    ])
}

fn qy_hat(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        -0.15 * (TAU * x).sin(),
        0.01 * (TAU * x).cos() * (TAU * y).cos(),
    ])
}

fn b_hat(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        0.1 * (TAU * x).sin() * (TAU * y).cos(),
        0.02 * (TAU * y).sin(),
    ])
}

fn b_x_hat(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![0.1 * TAU * (TAU * x).cos() * (TAU * y).cos(), 0.0])
}

fn b_y_hat(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![
        -0.1 * TAU * (TAU * x).sin() * (TAU * y).sin(),
        0.02 * TAU * (TAU * y).cos(),
    ])
}

fn state_at(x: f64, y: f64) -> CellState {
    CellState {
        h: h_hat(x, y),
        qx: qx_hat(x, y),
        qy: qy_hat(x, y),
    }
}

/// Analytic RHS at a point via centered differences of the exact fluxes.
fn exact_rhs(basis: &PceBasis, x: f64, y: f64, g: f64) -> DVector<f64> {
    let step = 1e-5;
    let eps = 1e-6;
    let fxp = exact_flux_x(basis, &state_at(x + step, y), g, eps).unwrap();
    let fxm = exact_flux_x(basis, &state_at(x - step, y), g, eps).unwrap();
    let gyp = exact_flux_y(basis, &state_at(x, y + step), g, eps).unwrap();
    let gym = exact_flux_y(basis, &state_at(x, y - step), g, eps).unwrap();
    let s = source(
        basis,
        &state_at(x, y),
        &b_x_hat(x, y),
        &b_y_hat(x, y),
        g,
    );
    (fxm - fxp) / (2.0 * step) + (gym - gyp) / (2.0 * step) + s
}

fn rhs_deviation(basis: &PceBasis, m: usize) -> f64 {
    let mesh = Mesh::new(m, m, (0.0, 1.0), (0.0, 1.0));
    let field = StateField::build(mesh, BcSpec::all_periodic(), 2, |i, j| {
        let (x, y) = mesh.cell_center(i, j);
        (state_at(x, y), b_hat(x, y))
    });
    let config = SchemeConfig::new(Scheme::Ec);
    let rhs = semidiscrete_rhs(basis, &field, &config).unwrap();
    let mut worst = 0.0f64;
    for j in 0..m {
        for i in 0..m {
            let (x, y) = mesh.cell_center(i, j);
            let exact = exact_rhs(basis, x, y, config.g);
            let dev = (rhs.dudt[j * m + i].stacked() - exact).abs().max();
            worst = worst.max(dev);
        }
    }
    worst
}

#[test]
fn ec_rhs_is_second_order_accurate() {
    let basis = PceBasis::build(MeasureSpec::uniform_1d(2)).unwrap();
    let errors: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&m| rhs_deviation(&basis, m))
        .collect();
    let orders = sgswe::diagnostics::convergence_orders(&errors).unwrap();
    println!("truncation errors {errors:?} orders {orders:?}");
    for order in orders {
        assert!(order >= 1.9, "truncation order {order} below second order");
    }
}
