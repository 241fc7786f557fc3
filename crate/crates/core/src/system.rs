//! The stochastic Galerkin shallow water system: fluxes, source, flux
//! Jacobians, velocity recovery with desingularization, and the energy
//! (entropy) tuple.
//!
//! A cell state holds the chaos coefficients of water height and the two
//! discharges, stacked as `U = (h, qx, qy)` in `R^{3K}`. States are
//! hyperbolic when the Galerkin matrix of the height is positive definite,
//! which is enforced through positivity of the height at the quadrature
//! nodes.

use nalgebra::{DMatrix, DVector};

use crate::error::SgError;
use crate::linalg::{sym_eig, SymEig};
use crate::pce::{Coeffs, PceBasis};
use crate::Result;

/// Conserved chaos coefficients of one cell: height and discharges.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Coeffs,
    pub qx: Coeffs,
    pub qy: Coeffs,
}

impl CellState {
    pub fn zeros(k: usize) -> Self {
        CellState {
            h: DVector::zeros(k),
            qx: DVector::zeros(k),
            qy: DVector::zeros(k),
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Stacked view `(h, qx, qy)` in `R^{3K}`.
    pub fn stacked(&self) -> DVector<f64> {
        let k = self.h.len();
        let mut u = DVector::zeros(3 * k);
        u.rows_mut(0, k).copy_from(&self.h);
        u.rows_mut(k, k).copy_from(&self.qx);
        u.rows_mut(2 * k, k).copy_from(&self.qy);
        u
    }

    pub fn from_stacked(u: &DVector<f64>) -> Self {
        let k = u.len() / 3;
        CellState {
            h: u.rows(0, k).into_owned(),
            qx: u.rows(k, k).into_owned(),
            qy: u.rows(2 * k, k).into_owned(),
        }
    }

    /// `self = a * self + b * other`, used by the SSP-RK stage combinations.
    pub fn combine(&mut self, a: f64, b: f64, other: &CellState) {
        self.h.axpy(b, &other.h, a);
        self.qx.axpy(b, &other.qx, a);
        self.qy.axpy(b, &other.qy, a);
    }
}

/// Velocity coefficients recovered from a cell state, with the discharges
/// recomputed for consistency when the desingularization is active.
#[derive(Debug, Clone)]
pub struct Velocities {
    pub u: Coeffs,
    pub v: Coeffs,
    /// `P(h) u`; equals the input `qx` to rounding when no eigenvalue was
    /// regularized.
    pub qx: Coeffs,
    pub qy: Coeffs,
}

/// The energy tuple of a state: energy, entropy variable, potentials, and
/// the exact energy fluxes.
#[derive(Debug, Clone)]
pub struct EntropyQuantities {
    pub energy: f64,
    /// Gradient of the energy with respect to the stacked state, in `R^{3K}`.
    pub v: DVector<f64>,
    pub psi: f64,
    pub phi: f64,
    pub hflux: f64,
    pub kflux: f64,
}

/// Regularized eigenvalue used when inverting `P(h)`: identical to `pi` for
/// `pi >= eps`, bounded away from zero below.
pub fn desingularized_eigenvalue(pi: f64, eps: f64) -> f64 {
    let p4 = pi.powi(4);
    (p4 + p4.max(eps.powi(4))).sqrt() / (std::f64::consts::SQRT_2 * pi)
}

/// Spectral data of `P(h)` for one cell, shared by velocity recovery, flux
/// Jacobians, and the time-step bounds.
#[derive(Debug, Clone)]
pub struct HeightOperator {
    pub p_h: DMatrix<f64>,
    pub eig: SymEig,
    desing_eps: f64,
}

impl HeightOperator {
    /// Build the Galerkin matrix of the height and its eigendecomposition;
    /// errors when the smallest eigenvalue is not strictly positive.
    pub fn new(basis: &PceBasis, h: &Coeffs, desing_eps: f64) -> Result<Self> {
        Self::from_matrix(basis.galerkin_matrix(h), desing_eps)
    }

    /// Build from an already-assembled Galerkin matrix of the height.
    pub fn from_matrix(p_h: DMatrix<f64>, desing_eps: f64) -> Result<Self> {
        let eig = sym_eig(&p_h)?;
        let min = eig.pi[eig.pi.len() - 1];
        if min <= 0.0 {
            return Err(SgError::hyperbolicity(format!(
                "P(h) has non-positive eigenvalue {min:.3e}"
            )));
        }
        Ok(HeightOperator {
            p_h,
            eig,
            desing_eps,
        })
    }

    /// Apply the desingularized inverse of `P(h)` to a coefficient vector.
    pub fn apply_inverse(&self, q: &Coeffs) -> Coeffs {
        let eps = self.desing_eps;
        self.eig
            .apply_spectral(|pi| 1.0 / desingularized_eigenvalue(pi, eps), q)
    }

    /// The desingularized inverse of `P(h)` as a matrix.
    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        let eps = self.desing_eps;
        self.eig
            .spectral_matrix(|pi| 1.0 / desingularized_eigenvalue(pi, eps))
    }

    /// Largest eigenvalue of `P(h)`.
    pub fn spectral_radius(&self) -> f64 {
        self.eig.pi[0].abs().max(self.eig.pi[self.eig.pi.len() - 1].abs())
    }

    /// Recover both velocity coefficient vectors and the consistent
    /// discharges.
    pub fn velocities(&self, qx: &Coeffs, qy: &Coeffs) -> Velocities {
        let u = self.apply_inverse(qx);
        let v = self.apply_inverse(qy);
        let qx = &self.p_h * &u;
        let qy = &self.p_h * &v;
        Velocities { u, v, qx, qy }
    }
}

/// Smallest value of the height expansion over the quadrature nodes.
pub fn min_node_height(basis: &PceBasis, h: &Coeffs) -> f64 {
    (0..basis.quad_len())
        .map(|n| basis.evaluate_at_node(n, h))
        .fold(f64::INFINITY, f64::min)
}

/// Positivity of the height at every quadrature node; sufficient for the
/// positive definiteness of `P(h)`.
pub fn hyperbolic_at_nodes(basis: &PceBasis, h: &Coeffs) -> bool {
    min_node_height(basis, h) > 0.0
}

/// Velocity recovery with desingularized inversion of `P(h)`.
pub fn velocities(basis: &PceBasis, state: &CellState, desing_eps: f64) -> Result<Velocities> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    Ok(op.velocities(&state.qx, &state.qy))
}

fn flux_x_from_parts(basis: &PceBasis, php: &Coeffs, vel: &Velocities, g: f64) -> DVector<f64> {
    let k = php.len();
    let pu = basis.galerkin_matrix(&vel.u);
    let pv = basis.galerkin_matrix(&vel.v);
    let mut f = DVector::zeros(3 * k);
    f.rows_mut(0, k).copy_from(&vel.qx);
    f.rows_mut(k, k).copy_from(&(&pu * &vel.qx + php * (0.5 * g)));
    f.rows_mut(2 * k, k).copy_from(&(&pv * &vel.qx));
    f
}

fn flux_y_from_parts(basis: &PceBasis, php: &Coeffs, vel: &Velocities, g: f64) -> DVector<f64> {
    let k = php.len();
    let pu = basis.galerkin_matrix(&vel.u);
    let pv = basis.galerkin_matrix(&vel.v);
    let mut f = DVector::zeros(3 * k);
    f.rows_mut(0, k).copy_from(&vel.qy);
    f.rows_mut(k, k).copy_from(&(&pu * &vel.qy));
    f.rows_mut(2 * k, k).copy_from(&(&pv * &vel.qy + php * (0.5 * g)));
    f
}

/// Exact x-flux of the SG system at a hyperbolic state.
pub fn exact_flux_x(
    basis: &PceBasis,
    state: &CellState,
    g: f64,
    desing_eps: f64,
) -> Result<DVector<f64>> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    let vel = op.velocities(&state.qx, &state.qy);
    let php = &op.p_h * &state.h;
    Ok(flux_x_from_parts(basis, &php, &vel, g))
}

/// Exact y-flux of the SG system at a hyperbolic state.
pub fn exact_flux_y(
    basis: &PceBasis,
    state: &CellState,
    g: f64,
    desing_eps: f64,
) -> Result<DVector<f64>> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    let vel = op.velocities(&state.qx, &state.qy);
    let php = &op.p_h * &state.h;
    Ok(flux_y_from_parts(basis, &php, &vel, g))
}

/// Exact (continuous) source term from the bottom-slope coefficients.
pub fn source(
    basis: &PceBasis,
    state: &CellState,
    bx_hat: &Coeffs,
    by_hat: &Coeffs,
    g: f64,
) -> DVector<f64> {
    let k = state.h.len();
    let p_h = basis.galerkin_matrix(&state.h);
    let mut s = DVector::zeros(3 * k);
    s.rows_mut(k, k).copy_from(&(&p_h * bx_hat * (-g)));
    s.rows_mut(2 * k, k).copy_from(&(&p_h * by_hat * (-g)));
    s
}

/// Direction selector for the interface machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    X,
    Y,
}

/// Flux Jacobian assembled from a height operator and recovered velocities;
/// the inverse of `P(h)` is always applied through the desingularized
/// eigendecomposition.
pub fn jacobian_from_parts(
    basis: &PceBasis,
    op: &HeightOperator,
    vel: &Velocities,
    g: f64,
    direction: Direction,
) -> DMatrix<f64> {
    let k = vel.u.len();
    let pinv = op.inverse_matrix();
    let pu = basis.galerkin_matrix(&vel.u);
    let pv = basis.galerkin_matrix(&vel.v);
    let mut j = DMatrix::zeros(3 * k, 3 * k);
    match direction {
        Direction::X => {
            let b = basis.galerkin_matrix(&vel.qx) * &pinv;
            j.view_mut((0, k), (k, k)).fill_with_identity();
            j.view_mut((k, 0), (k, k))
                .copy_from(&(&op.p_h * g - &b * &pu));
            j.view_mut((k, k), (k, k)).copy_from(&(&b + &pu));
            j.view_mut((2 * k, 0), (k, k)).copy_from(&(-(&b * &pv)));
            j.view_mut((2 * k, k), (k, k)).copy_from(&pv);
            j.view_mut((2 * k, 2 * k), (k, k)).copy_from(&b);
        }
        Direction::Y => {
            let b = basis.galerkin_matrix(&vel.qy) * &pinv;
            j.view_mut((0, 2 * k), (k, k)).fill_with_identity();
            j.view_mut((k, 0), (k, k)).copy_from(&(-(&b * &pu)));
            j.view_mut((k, k), (k, k)).copy_from(&b);
            j.view_mut((k, 2 * k), (k, k)).copy_from(&pu);
            j.view_mut((2 * k, 0), (k, k))
                .copy_from(&(&op.p_h * g - &b * &pv));
            j.view_mut((2 * k, 2 * k), (k, k)).copy_from(&(&b + &pv));
        }
    }
    j
}

/// Flux Jacobian of the x-flux at a hyperbolic state.
pub fn flux_jacobian_x(
    basis: &PceBasis,
    state: &CellState,
    g: f64,
    desing_eps: f64,
) -> Result<DMatrix<f64>> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    let vel = op.velocities(&state.qx, &state.qy);
    Ok(jacobian_from_parts(basis, &op, &vel, g, Direction::X))
}

/// Flux Jacobian of the y-flux at a hyperbolic state.
pub fn flux_jacobian_y(
    basis: &PceBasis,
    state: &CellState,
    g: f64,
    desing_eps: f64,
) -> Result<DMatrix<f64>> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    let vel = op.velocities(&state.qx, &state.qy);
    Ok(jacobian_from_parts(basis, &op, &vel, g, Direction::Y))
}

/// Inverse Hessian of the energy with respect to the conserved variables,
/// in closed block form. This is the natural scaling operator for entropy
/// diffusion: with eigenvectors scaled so `T T^T` equals this matrix, the
/// diffusion acting on entropy-variable jumps reduces to Roe diffusion on
/// the conserved variables with wave-speed magnitudes.
pub fn entropy_hessian_inverse(
    basis: &PceBasis,
    p_h: &DMatrix<f64>,
    u: &Coeffs,
    v: &Coeffs,
    g: f64,
) -> DMatrix<f64> {
    let k = u.len();
    let pu = basis.galerkin_matrix(u);
    let pv = basis.galerkin_matrix(v);
    let inv_g = 1.0 / g;
    let mut h = DMatrix::zeros(3 * k, 3 * k);
    for i in 0..k {
        h[(i, i)] = inv_g;
    }
    h.view_mut((0, k), (k, k)).copy_from(&(&pu * inv_g));
    h.view_mut((0, 2 * k), (k, k)).copy_from(&(&pv * inv_g));
    h.view_mut((k, 0), (k, k)).copy_from(&(&pu * inv_g));
    h.view_mut((2 * k, 0), (k, k)).copy_from(&(&pv * inv_g));
    h.view_mut((k, k), (k, k))
        .copy_from(&(p_h + &pu * &pu * inv_g));
    h.view_mut((k, 2 * k), (k, k))
        .copy_from(&(&pu * &pv * inv_g));
    h.view_mut((2 * k, k), (k, k))
        .copy_from(&(&pv * &pu * inv_g));
    h.view_mut((2 * k, 2 * k), (k, k))
        .copy_from(&(p_h + &pv * &pv * inv_g));
    h
}

/// Apply the energy Hessian (the Jacobian of the entropy variable with
/// respect to the conserved variables) to a stacked vector, matrix-free:
///
/// `y1 = P(u) Pi (P(u) x1 - x2) + P(v) Pi (P(v) x1 - x3) + g x1`,
/// `y2 = Pi (x2 - P(u) x1)`, `y3 = Pi (x3 - P(v) x1)`,
///
/// with `Pi` the (desingularized) inverse of `P(h)`.
pub fn entropy_hessian_apply(
    basis: &PceBasis,
    op: &HeightOperator,
    u: &Coeffs,
    v: &Coeffs,
    g: f64,
    x: &DVector<f64>,
) -> DVector<f64> {
    let k = u.len();
    let x1 = x.rows(0, k).into_owned();
    let x2 = x.rows(k, k).into_owned();
    let x3 = x.rows(2 * k, k).into_owned();
    let au = basis.galerkin_apply(u, &x1);
    let av = basis.galerkin_apply(v, &x1);
    let pu_term = op.apply_inverse(&(&au - &x2));
    let pv_term = op.apply_inverse(&(&av - &x3));
    let mut y = DVector::zeros(3 * k);
    y.rows_mut(0, k).copy_from(
        &(basis.galerkin_apply(u, &pu_term) + basis.galerkin_apply(v, &pv_term) + &x1 * g),
    );
    y.rows_mut(k, k).copy_from(&(-&pu_term));
    y.rows_mut(2 * k, k).copy_from(&(-&pv_term));
    y
}

/// Energy, entropy variable, potentials, and exact energy fluxes of a state
/// over bottom coefficients `b`.
pub fn entropy_quantities(
    basis: &PceBasis,
    state: &CellState,
    b: &Coeffs,
    g: f64,
    desing_eps: f64,
) -> Result<EntropyQuantities> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    let vel = op.velocities(&state.qx, &state.qy);
    let k = state.h.len();
    let php = &op.p_h * &state.h;

    let puu = basis.galerkin_apply(&vel.u, &vel.u);
    let pvv = basis.galerkin_apply(&vel.v, &vel.v);
    let energy = 0.5 * (vel.qx.dot(&vel.u) + vel.qy.dot(&vel.v))
        + 0.5 * g * state.h.norm_squared()
        + g * state.h.dot(b);

    let mut v = DVector::zeros(3 * k);
    v.rows_mut(0, k)
        .copy_from(&(-0.5 * &puu - 0.5 * &pvv + (&state.h + b) * g));
    v.rows_mut(k, k).copy_from(&vel.u);
    v.rows_mut(2 * k, k).copy_from(&vel.v);

    let psi = 0.5 * g * vel.u.dot(&php);
    let phi = 0.5 * g * vel.v.dot(&php);

    let pqx_u = basis.galerkin_apply(&vel.qx, &vel.u);
    let pqx_v = basis.galerkin_apply(&vel.qx, &vel.v);
    let pqy_u = basis.galerkin_apply(&vel.qy, &vel.u);
    let pqy_v = basis.galerkin_apply(&vel.qy, &vel.v);
    let surface = &state.h + b;
    let hflux = 0.5 * (vel.u.dot(&pqx_u) + vel.v.dot(&pqx_v)) + g * vel.qx.dot(&surface);
    let kflux = 0.5 * (vel.v.dot(&pqy_v) + vel.u.dot(&pqy_u)) + g * vel.qy.dot(&surface);

    Ok(EntropyQuantities {
        energy,
        v,
        psi,
        phi,
        hflux,
        kflux,
    })
}

impl PceBasis {
    /// `P(a) b` contracted directly from the triple-product tensor.
    pub fn galerkin_apply(&self, a: &Coeffs, b: &Coeffs) -> Coeffs {
        let k = self.len();
        assert_eq!(a.len(), k, "coefficient length must match basis size");
        assert_eq!(b.len(), k, "coefficient length must match basis size");
        let mut y = DVector::zeros(k);
        for kk in 0..k {
            let ak = a[kk];
            if ak == 0.0 {
                continue;
            }
            for l in 0..k {
                let mut acc = 0.0;
                for m in 0..k {
                    acc += self.triple(kk, l, m) * b[m];
                }
                y[l] += ak * acc;
            }
        }
        y
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::{random_coeffs, random_state};
    use super::*;
    use crate::pce::MeasureSpec;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    const EPS_DESING: f64 = 1e-6;

    fn k1_basis() -> PceBasis {
        PceBasis::build(MeasureSpec::uniform_1d(1)).unwrap()
    }

    fn k1_state(h: f64, u: f64, v: f64) -> CellState {
        CellState {
            h: DVector::from_element(1, h),
            qx: DVector::from_element(1, h * u),
            qy: DVector::from_element(1, h * v),
        }
    }

    fn uniform_basis(order: usize) -> PceBasis {
        PceBasis::build(MeasureSpec::uniform_1d(order)).unwrap()
    }

    #[test]
    fn velocities_solve_exactly_away_from_desingularization() {
        let basis = uniform_basis(4);
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..20 {
            let state = random_state(&mut rng, &basis);
            let vel = velocities(&basis, &state, EPS_DESING).unwrap();
            let p_h = basis.galerkin_matrix(&state.h);
            assert!((&p_h * &vel.u - &state.qx).abs().max() <= 1e-10);
            assert!((&p_h * &vel.v - &state.qy).abs().max() <= 1e-10);
            assert!((&vel.qx - &state.qx).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn desingularized_eigenvalue_formula() {
        let eps = 1e-6;
        // Above the threshold the map is the identity up to rounding.
        assert_abs_diff_eq!(desingularized_eigenvalue(3.5, eps), 3.5, epsilon = 1e-14);
        assert_abs_diff_eq!(desingularized_eigenvalue(eps, eps), eps, epsilon = 1e-20);
        // At eps/2 the regularized value is sqrt(17)/(2 sqrt(2)) * eps.
        let expect = 17f64.sqrt() / (2.0 * 2f64.sqrt()) * eps;
        assert_abs_diff_eq!(
            desingularized_eigenvalue(eps / 2.0, eps),
            expect,
            epsilon = 1e-20
        );
    }

    #[test]
    fn desingularization_corrects_discharge() {
        let basis = k1_basis();
        let eps = 1e-3;
        let h = eps / 2.0;
        let state = k1_state(h, 1.0, 0.0);
        let vel = velocities(&basis, &state, eps).unwrap();
        let pi_tilde = desingularized_eigenvalue(h, eps);
        assert_abs_diff_eq!(vel.u[0], state.qx[0] / pi_tilde, epsilon = 1e-12);
        assert_abs_diff_eq!(vel.qx[0], h * state.qx[0] / pi_tilde, epsilon = 1e-12);
        assert!(vel.qx[0].abs() < state.qx[0].abs());
    }

    #[test]
    fn zero_discharge_gives_zero_velocity() {
        let basis = uniform_basis(3);
        let mut state = CellState::zeros(3);
        state.h[0] = 1.0;
        state.h[1] = 0.1;
        let vel = velocities(&basis, &state, EPS_DESING).unwrap();
        assert_eq!(vel.u.abs().max(), 0.0);
        assert_eq!(vel.v.abs().max(), 0.0);
        assert_eq!(vel.qx.abs().max(), 0.0);
    }

    #[test]
    fn velocities_reject_nonpositive_height() {
        let basis = uniform_basis(2);
        let state = CellState {
            h: DVector::from_vec(vec![-0.5, 0.0]),
            qx: DVector::zeros(2),
            qy: DVector::zeros(2),
        };
        assert!(matches!(
            velocities(&basis, &state, EPS_DESING),
            Err(SgError::HyperbolicityLoss { .. })
        ));
    }

    #[test]
    fn deterministic_flux_values() {
        let basis = k1_basis();
        let state = k1_state(1.0, 0.3, 0.0);
        let f = exact_flux_x(&basis, &state, 1.0, EPS_DESING).unwrap();
        assert_abs_diff_eq!(f[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(f[1], 0.59, epsilon = 1e-14);
        assert_abs_diff_eq!(f[2], 0.0, epsilon = 1e-14);
        let g = exact_flux_y(&basis, &state, 1.0, EPS_DESING).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[2], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn still_water_flux_is_pressure_only() {
        let basis = uniform_basis(3);
        let mut state = CellState::zeros(3);
        state.h[0] = 1.3;
        state.h[2] = 0.05;
        let g = 1.0;
        let f = exact_flux_x(&basis, &state, g, EPS_DESING).unwrap();
        let php = basis.galerkin_apply(&state.h, &state.h);
        assert_eq!(f.rows(0, 3).abs().max(), 0.0);
        assert!((f.rows(3, 3) - php * (0.5 * g)).abs().max() <= 1e-14);
        assert_eq!(f.rows(6, 3).abs().max(), 0.0);
    }

    #[test]
    fn flux_first_block_is_consistent_discharge() {
        let basis = uniform_basis(4);
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..10 {
            let state = random_state(&mut rng, &basis);
            let vel = velocities(&basis, &state, EPS_DESING).unwrap();
            let f = exact_flux_x(&basis, &state, 1.0, EPS_DESING).unwrap();
            assert!((f.rows(0, 4) - &vel.qx).abs().max() <= 1e-14);
        }
    }

    #[test]
    fn source_examples() {
        let basis = k1_basis();
        let state = k1_state(2.0, 0.0, 0.0);
        let zero = DVector::zeros(1);
        let flat = source(&basis, &state, &zero, &zero, 1.0);
        assert_eq!(flat.abs().max(), 0.0);

        let bx = DVector::from_element(1, 0.5);
        let s = source(&basis, &state, &bx, &zero, 1.0);
        assert_abs_diff_eq!(s[1], -1.0, epsilon = 1e-14);
        assert_eq!(s[2], 0.0);

        let doubled = k1_state(4.0, 0.0, 0.0);
        let s2 = source(&basis, &doubled, &bx, &zero, 1.0);
        assert_abs_diff_eq!(s2[1], 2.0 * s[1], epsilon = 1e-14);
    }

    #[test]
    fn deterministic_jacobian_entries() {
        let basis = k1_basis();
        let state = k1_state(1.0, 0.3, 0.0);
        let j = flux_jacobian_x(&basis, &state, 1.0, EPS_DESING).unwrap();
        let expect =
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.91, 0.6, 0.0, 0.0, 0.0, 0.3]);
        assert!((j - expect).abs().max() <= 1e-13);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let basis = uniform_basis(3);
        let g = 1.0;
        let mut rng = StdRng::seed_from_u64(13);
        let step = 1e-6;
        type FluxFn = fn(&PceBasis, &CellState, f64, f64) -> crate::Result<DVector<f64>>;
        for _ in 0..10 {
            let state = random_state(&mut rng, &basis);
            let cases: [(DMatrix<f64>, FluxFn); 2] = [
                (
                    flux_jacobian_x(&basis, &state, g, EPS_DESING).unwrap(),
                    exact_flux_x,
                ),
                (
                    flux_jacobian_y(&basis, &state, g, EPS_DESING).unwrap(),
                    exact_flux_y,
                ),
            ];
            for (jac, flux) in cases {
                let u0 = state.stacked();
                let scale = jac.abs().max();
                for col in 0..u0.len() {
                    let mut up = u0.clone();
                    up[col] += step;
                    let mut dn = u0.clone();
                    dn[col] -= step;
                    let fp = flux(&basis, &CellState::from_stacked(&up), g, EPS_DESING).unwrap();
                    let fm = flux(&basis, &CellState::from_stacked(&dn), g, EPS_DESING).unwrap();
                    let fd = (fp - fm) / (2.0 * step);
                    for row in 0..u0.len() {
                        assert!(
                            (jac[(row, col)] - fd[row]).abs() <= 1e-6 * scale.max(1.0),
                            "jacobian mismatch at ({row}, {col})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn jacobian_spectra_are_real_for_hyperbolic_states() {
        let basis = uniform_basis(4);
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..20 {
            let state = random_state(&mut rng, &basis);
            let jx = flux_jacobian_x(&basis, &state, 1.0, EPS_DESING).unwrap();
            let jy = flux_jacobian_y(&basis, &state, 1.0, EPS_DESING).unwrap();
            assert!(crate::linalg::real_eig(&jx).is_ok());
            assert!(crate::linalg::real_eig(&jy).is_ok());
        }
    }

    #[test]
    fn entropy_still_water() {
        let basis = uniform_basis(3);
        let mut state = CellState::zeros(3);
        state.h[0] = 1.0;
        let b = DVector::zeros(3);
        let q = entropy_quantities(&basis, &state, &b, 1.0, EPS_DESING).unwrap();
        assert_abs_diff_eq!(q.energy, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(q.v[0], 1.0, epsilon = 1e-14);
        assert!(q.v.rows(1, 8).abs().max() <= 1e-14);
        assert_eq!(q.psi, 0.0);
        assert_eq!(q.phi, 0.0);
    }

    #[test]
    fn deterministic_energy_values() {
        let basis = k1_basis();
        let state = k1_state(1.0, 0.3, 0.0);
        let b = DVector::zeros(1);
        let q = entropy_quantities(&basis, &state, &b, 1.0, EPS_DESING).unwrap();
        assert_abs_diff_eq!(q.energy, 0.545, epsilon = 1e-14);
        assert_abs_diff_eq!(q.hflux, 0.3135, epsilon = 1e-14);
    }

    #[test]
    fn potential_identities() {
        let basis = uniform_basis(3);
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..30 {
            let state = random_state(&mut rng, &basis);
            let b = random_coeffs(&mut rng, 3, 0.2);
            let q = entropy_quantities(&basis, &state, &b, 1.0, EPS_DESING).unwrap();
            let f = exact_flux_x(&basis, &state, 1.0, EPS_DESING).unwrap();
            let gflux = exact_flux_y(&basis, &state, 1.0, EPS_DESING).unwrap();
            let scale = q.v.abs().max().max(1.0);
            assert!((q.v.dot(&f) - q.hflux - q.psi).abs() <= 1e-12 * scale);
            assert!((q.v.dot(&gflux) - q.kflux - q.phi).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn entropy_variable_is_energy_gradient() {
        let basis = uniform_basis(3);
        let g = 1.0;
        let step = 1e-6;
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..50 {
            let state = random_state(&mut rng, &basis);
            let b = random_coeffs(&mut rng, 3, 0.2);
            let q = entropy_quantities(&basis, &state, &b, g, EPS_DESING).unwrap();
            let u0 = state.stacked();
            let scale = q.v.abs().max().max(1.0);
            for col in 0..u0.len() {
                let mut up = u0.clone();
                up[col] += step;
                let mut dn = u0.clone();
                dn[col] -= step;
                let ep = entropy_quantities(&basis, &CellState::from_stacked(&up), &b, g, EPS_DESING)
                    .unwrap()
                    .energy;
                let em = entropy_quantities(&basis, &CellState::from_stacked(&dn), &b, g, EPS_DESING)
                    .unwrap()
                    .energy;
                let fd = (ep - em) / (2.0 * step);
                assert!(
                    (q.v[col] - fd).abs() <= 1e-5 * scale,
                    "component {col}: analytic {} vs fd {fd}",
                    q.v[col]
                );
            }
        }
    }

    #[test]
    fn velocity_gradient_lemma() {
        let basis = uniform_basis(3);
        let k = 3;
        let step = 1e-6;
        let mut rng = StdRng::seed_from_u64(59);
        for _ in 0..50 {
            let state = random_state(&mut rng, &basis);
            let op = HeightOperator::new(&basis, &state.h, EPS_DESING).unwrap();
            let vel = op.velocities(&state.qx, &state.qy);
            let pinv = op.inverse_matrix();
            let pu = basis.galerkin_matrix(&vel.u);
            let grad_h = -(&pinv * &pu);
            let u0 = state.stacked();
            for col in 0..3 * k {
                let mut up = u0.clone();
                up[col] += step;
                let mut dn = u0.clone();
                dn[col] -= step;
                let vp = velocities(&basis, &CellState::from_stacked(&up), EPS_DESING).unwrap();
                let vm = velocities(&basis, &CellState::from_stacked(&dn), EPS_DESING).unwrap();
                let fd = (&vp.u - &vm.u) / (2.0 * step);
                for row in 0..k {
                    let analytic = if col < k {
                        grad_h[(row, col)]
                    } else if col < 2 * k {
                        pinv[(row, col - k)]
                    } else {
                        0.0
                    };
                    assert!(
                        (analytic - fd[row]).abs() <= 1e-5 * pinv.abs().max().max(1.0),
                        "du/dU mismatch at ({row}, {col})"
                    );
                }
            }
        }
    }

    #[test]
    fn energy_is_convex() {
        let basis = uniform_basis(3);
        let g = 1.0;
        let step = 1e-4;
        let mut rng = StdRng::seed_from_u64(61);
        for _ in 0..20 {
            let state = random_state(&mut rng, &basis);
            let b = random_coeffs(&mut rng, 3, 0.2);
            let u0 = state.stacked();
            let n = u0.len();
            let energy_at = |u: &DVector<f64>| {
                entropy_quantities(&basis, &CellState::from_stacked(u), &b, g, EPS_DESING)
                    .unwrap()
                    .energy
            };
            let e0 = energy_at(&u0);
            let mut hessian = DMatrix::zeros(n, n);
            for a in 0..n {
                for c in a..n {
                    let mut upp = u0.clone();
                    upp[a] += step;
                    upp[c] += step;
                    let mut upm = u0.clone();
                    upm[a] += step;
                    upm[c] -= step;
                    let mut ump = u0.clone();
                    ump[a] -= step;
                    ump[c] += step;
                    let mut umm = u0.clone();
                    umm[a] -= step;
                    umm[c] -= step;
                    let second = if a == c {
                        let mut up = u0.clone();
                        up[a] += step;
                        let mut dn = u0.clone();
                        dn[a] -= step;
                        (energy_at(&up) - 2.0 * e0 + energy_at(&dn)) / (step * step)
                    } else {
                        (energy_at(&upp) - energy_at(&upm) - energy_at(&ump) + energy_at(&umm))
                            / (4.0 * step * step)
                    };
                    hessian[(a, c)] = second;
                    hessian[(c, a)] = second;
                }
            }
            let eig = sym_eig(&hessian).unwrap();
            let min = eig.pi[n - 1];
            assert!(min >= -1e-6, "Hessian min eigenvalue {min}");
        }
    }

    #[test]
    fn flux_energy_compatibility() {
        let basis = uniform_basis(2);
        let g = 1.0;
        let step = 1e-6;
        let mut rng = StdRng::seed_from_u64(67);
        for _ in 0..50 {
            let state = random_state(&mut rng, &basis);
            let b = random_coeffs(&mut rng, 2, 0.2);
            let q = entropy_quantities(&basis, &state, &b, g, EPS_DESING).unwrap();
            let jx = flux_jacobian_x(&basis, &state, g, EPS_DESING).unwrap();
            let jy = flux_jacobian_y(&basis, &state, g, EPS_DESING).unwrap();
            let lhs_x = jx.transpose() * &q.v;
            let lhs_y = jy.transpose() * &q.v;
            let u0 = state.stacked();
            let scale = lhs_x.abs().max().max(lhs_y.abs().max()).max(1.0);
            for col in 0..u0.len() {
                let mut up = u0.clone();
                up[col] += step;
                let mut dn = u0.clone();
                dn[col] -= step;
                let qp = entropy_quantities(&basis, &CellState::from_stacked(&up), &b, g, EPS_DESING)
                    .unwrap();
                let qm = entropy_quantities(&basis, &CellState::from_stacked(&dn), &b, g, EPS_DESING)
                    .unwrap();
                let dh = (qp.hflux - qm.hflux) / (2.0 * step);
                let dk = (qp.kflux - qm.kflux) / (2.0 * step);
                assert!((lhs_x[col] - dh).abs() <= 1e-5 * scale);
                assert!((lhs_y[col] - dk).abs() <= 1e-5 * scale);
            }
        }
    }

    #[test]
    fn deterministic_reduction_battery() {
        let basis = k1_basis();
        let g = 1.0;
        let mut rng = StdRng::seed_from_u64(71);
        for _ in 0..100 {
            use rand::Rng;
            let h: f64 = rng.random_range(0.2..3.0);
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(-1.0..1.0);
            let bb: f64 = rng.random_range(-0.3..0.3);
            let state = k1_state(h, u, v);
            let b = DVector::from_element(1, bb);

            let f = exact_flux_x(&basis, &state, g, EPS_DESING).unwrap();
            let qx = h * u;
            let qy = h * v;
            assert_abs_diff_eq!(f[0], qx, epsilon = 1e-12);
            assert_abs_diff_eq!(f[1], qx * qx / h + 0.5 * g * h * h, epsilon = 1e-12);
            assert_abs_diff_eq!(f[2], qx * qy / h, epsilon = 1e-12);

            let gf = exact_flux_y(&basis, &state, g, EPS_DESING).unwrap();
            assert_abs_diff_eq!(gf[0], qy, epsilon = 1e-12);
            assert_abs_diff_eq!(gf[1], qx * qy / h, epsilon = 1e-12);
            assert_abs_diff_eq!(gf[2], qy * qy / h + 0.5 * g * h * h, epsilon = 1e-12);

            let q = entropy_quantities(&basis, &state, &b, g, EPS_DESING).unwrap();
            assert_abs_diff_eq!(
                q.energy,
                0.5 * (qx * u + qy * v) + 0.5 * g * h * h + g * h * bb,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                q.hflux,
                0.5 * (h * u.powi(3) + h * u * v * v) + g * qx * (h + bb),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                q.kflux,
                0.5 * (h * u * u * v + h * v.powi(3)) + g * qy * (h + bb),
                epsilon = 1e-12
            );
        }
    }
}
