//! Benchmarks of the per-step building blocks: basis construction, the
//! Galerkin product, single flux evaluations, and full RHS sweeps.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use std::hint::black_box;

use sgswe::pce::{BetaDim, MeasureSpec, PceBasis};
use sgswe::scheme::{
    ec_flux_x, semidiscrete_rhs, BcSpec, Mesh, Scheme, SchemeConfig, StateField,
};
use sgswe::system::{CellState, HeightOperator};

fn basis_k4() -> PceBasis {
    PceBasis::build(MeasureSpec::uniform_1d(4)).unwrap()
}

fn sample_state(basis: &PceBasis) -> CellState {
    let k = basis.len();
    let mut h = DVector::zeros(k);
    h[0] = 1.1;
    for i in 1..k {
        h[i] = 0.05 / (i + 1) as f64;
    }
    let mut qx = DVector::zeros(k);
    qx[0] = 0.3;
    qx[1] = 0.02;
    let mut qy = DVector::zeros(k);
    qy[0] = -0.1;
    CellState { h, qx, qy }
}

fn hump_field(basis: &PceBasis, m: usize) -> StateField {
    let k = basis.len();
    let mesh = Mesh::new(m, m, (0.0, 2.0), (0.0, 1.0));
    StateField::build(mesh, BcSpec::channel(), k, |i, j| {
        let (x, y) = mesh.cell_center(i, j);
        let b = basis.project(|xi| {
            0.8 * (-5.0 * (x - 0.9 + 0.1 * xi[0]).powi(2) - 50.0 * (y - 0.5).powi(2)).exp()
        });
        let w = basis.project(|_| 1.0);
        let u = basis.project(|_| 0.1);
        let h = &w - &b;
        let op = HeightOperator::new(basis, &h, 1e-6).unwrap();
        (
            CellState {
                qx: &op.p_h * &u,
                qy: DVector::zeros(k),
                h,
            },
            b,
        )
    })
}

fn bench_basis(c: &mut Criterion) {
    c.bench_function("basis_build_k4", |b| {
        b.iter(|| PceBasis::build(black_box(MeasureSpec::uniform_1d(4))).unwrap())
    });
    c.bench_function("basis_build_k9_bivariate", |b| {
        let measure = MeasureSpec {
            dims: vec![
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
        };
        b.iter(|| PceBasis::build(black_box(measure.clone())).unwrap())
    });
}

fn bench_operators(c: &mut Criterion) {
    let basis = basis_k4();
    let state = sample_state(&basis);
    c.bench_function("galerkin_matrix_k4", |b| {
        b.iter(|| basis.galerkin_matrix(black_box(&state.h)))
    });
    c.bench_function("velocity_recovery_k4", |b| {
        b.iter(|| sgswe::system::velocities(&basis, black_box(&state), 1e-6).unwrap())
    });
    let right = {
        let mut s = state.clone();
        s.h[0] = 0.9;
        s
    };
    c.bench_function("ec_flux_k4", |b| {
        b.iter(|| ec_flux_x(&basis, black_box(&state), black_box(&right), 1.0, 1e-6).unwrap())
    });
}

fn bench_rhs(c: &mut Criterion) {
    let basis = basis_k4();
    let field = hump_field(&basis, 32);
    for scheme in [Scheme::Ec, Scheme::Es2] {
        let config = SchemeConfig::new(scheme);
        c.bench_function(&format!("rhs_32x32_k4_{scheme}"), |b| {
            b.iter(|| semidiscrete_rhs(&basis, black_box(&field), &config).unwrap())
        });
    }
}

criterion_group!(benches, bench_basis, bench_operators, bench_rhs);
criterion_main!(benches);
