//! Semi-discrete finite-volume operator on a uniform rectangular grid.
//!
//! Interfacial fluxes come in three flavors sharing one well-balanced
//! source discretization:
//!
//! * `EC` — energy conservative: built from interfacial averages so the
//!   discrete energy satisfies an exact local balance,
//! * `ES1` — EC plus first-order Roe-type diffusion acting on the jump of
//!   the entropy variable,
//! * `ES2` — EC plus second-order diffusion, where the entropy-variable
//!   jumps are limited through a minmod TVD reconstruction in eigenvector
//!   coordinates.
//!
//! The grid keeps two ghost layers per side so the limited reconstruction
//! has full stencils at boundary-adjacent interfaces.

use nalgebra::{DMatrix, DVector};

use crate::error::SgError;
use crate::linalg::real_eig;
use crate::pce::{Coeffs, PceBasis};
use crate::system::{
    entropy_hessian_apply, entropy_hessian_inverse, jacobian_from_parts, CellState, Direction,
    EntropyQuantities, HeightOperator, Velocities,
};
use crate::Result;

/// Ghost layers per side; the second layer feeds the ES2 stencil.
pub const GHOST: usize = 2;

/// Numerical flux family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Ec,
    Es1,
    Es2,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Ec => write!(f, "EC"),
            Scheme::Es1 => write!(f, "ES1"),
            Scheme::Es2 => write!(f, "ES2"),
        }
    }
}

/// Boundary treatment of one side of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    /// Zeroth-order extrapolation of the nearest interior cell.
    Outflow,
}

/// Per-side boundary conditions. Opposite sides must agree on periodicity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BcSpec {
    pub left: Boundary,
    pub right: Boundary,
    pub bottom: Boundary,
    pub top: Boundary,
}

impl BcSpec {
    pub fn all_periodic() -> Self {
        BcSpec {
            left: Boundary::Periodic,
            right: Boundary::Periodic,
            bottom: Boundary::Periodic,
            top: Boundary::Periodic,
        }
    }

    /// Outflow left/right, periodic top/bottom; the standard channel setup.
    pub fn channel() -> Self {
        BcSpec {
            left: Boundary::Outflow,
            right: Boundary::Outflow,
            bottom: Boundary::Periodic,
            top: Boundary::Periodic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mismatch = |a: Boundary, b: Boundary| {
            (a == Boundary::Periodic) != (b == Boundary::Periodic)
        };
        if mismatch(self.left, self.right) || mismatch(self.bottom, self.top) {
            return Err(SgError::InvalidMeasure(
                "periodic boundaries must be paired on opposite sides".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform rectangular mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub mx: usize,
    pub my: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Mesh {
    pub fn new(mx: usize, my: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        assert!(mx > 0 && my > 0, "mesh must have at least one cell per axis");
        assert!(
            x_range.1 > x_range.0 && y_range.1 > y_range.0,
            "domain ranges must be increasing"
        );
        Mesh {
            mx,
            my,
            x_min: x_range.0,
            x_max: x_range.1,
            y_min: y_range.0,
            y_max: y_range.1,
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.mx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / self.my as f64
    }

    /// Center of interior cell `(i, j)`, 0-based.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_min + (i as f64 + 0.5) * self.dx(),
            self.y_min + (j as f64 + 0.5) * self.dy(),
        )
    }
}

/// Source discretization: the well-balanced interfacial form, or plain
/// central differencing of the bottom (not well-balanced, for comparison
/// runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceKind {
    #[default]
    WellBalanced,
    CentralDifference,
}

/// Column scaling of the eigenvector basis entering the ES diffusion.
///
/// Entropy scaling (`T T^T` equal to the inverse energy Hessian at the
/// interface state) turns the diffusion on entropy-variable jumps into Roe
/// diffusion on the conserved variables, keeping the explicit time-step
/// restriction at the wave-speed CFL even on near-dry cells. Unit columns
/// leave the raw eigenvectors untouched; the resulting diffusion is still
/// semi-discretely energy stable but becomes stiff where the height is
/// small.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffusionScaling {
    #[default]
    EntropyScaled,
    UnitColumns,
}

/// Everything the spatial operator needs to know besides the state.
#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub g: f64,
    pub desing_eps: f64,
    pub source: SourceKind,
    pub diffusion_scaling: DiffusionScaling,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme) -> Self {
        SchemeConfig {
            scheme,
            g: 1.0,
            desing_eps: 1e-6,
            source: SourceKind::WellBalanced,
            diffusion_scaling: DiffusionScaling::EntropyScaled,
        }
    }
}

/// Grid of cell states with two ghost layers plus the (time-independent)
/// bottom coefficients on the same layout.
#[derive(Debug, Clone)]
pub struct StateField {
    pub mesh: Mesh,
    pub bc: BcSpec,
    k: usize,
    cells: Vec<CellState>,
    bottom: Vec<Coeffs>,
}

impl StateField {
    /// Build a field from per-cell initial data `(state, bottom)` indexed by
    /// interior cell, then fill all ghost layers.
    pub fn build(
        mesh: Mesh,
        bc: BcSpec,
        k: usize,
        mut init: impl FnMut(usize, usize) -> (CellState, Coeffs),
    ) -> Self {
        let nx = mesh.mx + 2 * GHOST;
        let ny = mesh.my + 2 * GHOST;
        let mut cells = vec![CellState::zeros(k); nx * ny];
        let mut bottom = vec![DVector::zeros(k); nx * ny];
        for j in 0..mesh.my {
            for i in 0..mesh.mx {
                let (state, b) = init(i, j);
                assert_eq!(state.len(), k, "initial state has wrong basis size");
                assert_eq!(b.len(), k, "bottom coefficients have wrong basis size");
                let idx = Self::index_for(mesh.mx, i + GHOST, j + GHOST);
                cells[idx] = state;
                bottom[idx] = b;
            }
        }
        let mut field = StateField {
            mesh,
            bc,
            k,
            cells,
            bottom,
        };
        fill_ghosts(&mut field.bottom, mesh.mx, mesh.my, bc);
        field.apply_bc();
        field
    }

    fn index_for(mx: usize, ei: usize, ej: usize) -> usize {
        ej * (mx + 2 * GHOST) + ei
    }

    #[inline]
    pub(crate) fn ext_index(&self, ei: usize, ej: usize) -> usize {
        Self::index_for(self.mesh.mx, ei, ej)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub(crate) fn cell_ext(&self, ei: usize, ej: usize) -> &CellState {
        &self.cells[self.ext_index(ei, ej)]
    }

    #[inline]
    pub(crate) fn bottom_ext(&self, ei: usize, ej: usize) -> &Coeffs {
        &self.bottom[self.ext_index(ei, ej)]
    }

    /// Interior cell accessor, 0-based.
    pub fn cell(&self, i: usize, j: usize) -> &CellState {
        assert!(i < self.mesh.mx && j < self.mesh.my);
        self.cell_ext(i + GHOST, j + GHOST)
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut CellState {
        assert!(i < self.mesh.mx && j < self.mesh.my);
        let idx = self.ext_index(i + GHOST, j + GHOST);
        &mut self.cells[idx]
    }

    /// Interior bottom coefficients, 0-based.
    pub fn bottom_coeffs(&self, i: usize, j: usize) -> &Coeffs {
        assert!(i < self.mesh.mx && j < self.mesh.my);
        self.bottom_ext(i + GHOST, j + GHOST)
    }

    /// Fill ghost cells of the state from the interior per the boundary
    /// conditions.
    pub fn apply_bc(&mut self) {
        let (mx, my, bc) = (self.mesh.mx, self.mesh.my, self.bc);
        fill_ghosts(&mut self.cells, mx, my, bc);
    }

    /// Apply `self = a * self + b * other` on every interior cell, then
    /// refresh the ghosts.
    pub(crate) fn combine(&mut self, a: f64, b: f64, other: &StateField) {
        for j in 0..self.mesh.my {
            for i in 0..self.mesh.mx {
                let idx = self.ext_index(i + GHOST, j + GHOST);
                let rhs = &other.cells[idx];
                self.cells[idx].combine(a, b, rhs);
            }
        }
        self.apply_bc();
    }

    /// Smallest height value over interior cells and quadrature nodes.
    pub fn min_node_height(&self, basis: &PceBasis) -> f64 {
        let mut min = f64::INFINITY;
        for j in 0..self.mesh.my {
            for i in 0..self.mesh.mx {
                min = min.min(crate::system::min_node_height(basis, &self.cell(i, j).h));
            }
        }
        min
    }
}

/// Ghost fill shared by the state and the bottom: x-direction first over all
/// rows, then y-direction over all columns so corners compose both sides.
fn fill_ghosts<T: Clone>(data: &mut [T], mx: usize, my: usize, bc: BcSpec) {
    let nx = mx + 2 * GHOST;
    let ny = my + 2 * GHOST;
    let idx = |ei: usize, ej: usize| ej * nx + ei;
    for ej in 0..ny {
        match bc.left {
            Boundary::Periodic => {
                // Inner ghost first so one-cell-wide interiors wrap correctly.
                data[idx(1, ej)] = data[idx(mx + 1, ej)].clone();
                data[idx(0, ej)] = data[idx(mx, ej)].clone();
            }
            Boundary::Outflow => {
                data[idx(0, ej)] = data[idx(GHOST, ej)].clone();
                data[idx(1, ej)] = data[idx(GHOST, ej)].clone();
            }
        }
        match bc.right {
            Boundary::Periodic => {
                data[idx(mx + 2, ej)] = data[idx(2, ej)].clone();
                data[idx(mx + 3, ej)] = data[idx(3, ej)].clone();
            }
            Boundary::Outflow => {
                data[idx(mx + 2, ej)] = data[idx(mx + 1, ej)].clone();
                data[idx(mx + 3, ej)] = data[idx(mx + 1, ej)].clone();
            }
        }
    }
    for ei in 0..nx {
        match bc.bottom {
            Boundary::Periodic => {
                data[idx(ei, 1)] = data[idx(ei, my + 1)].clone();
                data[idx(ei, 0)] = data[idx(ei, my)].clone();
            }
            Boundary::Outflow => {
                data[idx(ei, 0)] = data[idx(ei, GHOST)].clone();
                data[idx(ei, 1)] = data[idx(ei, GHOST)].clone();
            }
        }
        match bc.top {
            Boundary::Periodic => {
                data[idx(ei, my + 2)] = data[idx(ei, 2)].clone();
                data[idx(ei, my + 3)] = data[idx(ei, 3)].clone();
            }
            Boundary::Outflow => {
                data[idx(ei, my + 2)] = data[idx(ei, my + 1)].clone();
                data[idx(ei, my + 3)] = data[idx(ei, my + 1)].clone();
            }
        }
    }
}

/// Interface average and jump of any pair of coefficient vectors.
pub fn iface_avg_jump(left: &DVector<f64>, right: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    ((left + right) * 0.5, right - left)
}

/// Minmod limiter value, clamped to `[0, 1]`; `NaN` (a 0/0 ratio) limits
/// to zero.
pub fn minmod_phi(theta: f64) -> f64 {
    if theta.is_nan() || theta < 0.0 {
        0.0
    } else if theta <= 1.0 {
        theta
    } else {
        1.0
    }
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// First-order energy-stable flux from an EC flux, a diffusion matrix, and
/// an entropy-variable jump.
pub fn es1_flux(ec: &DVector<f64>, q: &DMatrix<f64>, v_jump: &DVector<f64>) -> DVector<f64> {
    ec - 0.5 * (q * v_jump)
}

/// Limited second-order jump of the entropy variable at an interface.
///
/// `v` holds the entropy variables of the four cells around the interface
/// (the jump in question is `v[2] - v[1]`); `t_prev`, `t_self`, `t_next` are
/// the eigenvector matrices of the three interfaces involved. Falls back to
/// the first-order jump when `t_self` is numerically singular.
pub fn es2_jump(
    v: &[DVector<f64>; 4],
    t_prev: &DMatrix<f64>,
    t_self: &DMatrix<f64>,
    t_next: &DMatrix<f64>,
) -> DVector<f64> {
    let jump_prev = &v[1] - &v[0];
    let jump_self = &v[2] - &v[1];
    let jump_next = &v[3] - &v[2];
    let w_prev = t_prev.transpose() * jump_prev;
    let w_self = t_self.transpose() * &jump_self;
    let w_next = t_next.transpose() * jump_next;
    let mut limited = w_self.clone();
    for l in 0..limited.len() {
        limited[l] *= limiter_factor(w_prev[l], w_self[l], w_next[l]);
    }
    match crate::linalg::solve_linear(&t_self.transpose(), &limited) {
        Ok(x) => x,
        Err(_) => jump_self,
    }
}

/// Diagonal limiter entry `1 - phi(prev/self)/2 - phi(next/self)/2`,
/// always in `[0, 1]`.
fn limiter_factor(w_prev: f64, w_self: f64, w_next: f64) -> f64 {
    1.0 - 0.5 * minmod_phi(ratio_or_zero(w_prev, w_self))
        - 0.5 * minmod_phi(ratio_or_zero(w_next, w_self))
}

/// Relative mode size below which a state is treated as deterministic,
/// enabling the closed-form eigen structure of the interface Jacobian.
const DETERMINISTIC_TOL: f64 = 1e-13;

/// Per-cell data reused across the interface sweeps of one RHS evaluation.
struct CellPre {
    op: HeightOperator,
    u: Coeffs,
    v: Coeffs,
    /// `P(h) h`.
    php: Coeffs,
    /// Entropy variable, `3K`.
    vent: DVector<f64>,
    energy: f64,
    psi: f64,
    phi: f64,
    /// Mean height, and whether all higher modes are negligible.
    h_mean: f64,
    deterministic: bool,
}

fn tail_max(z: &Coeffs) -> f64 {
    z.iter().skip(1).fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn cell_pre(basis: &PceBasis, state: &CellState, b: &Coeffs, config: &SchemeConfig) -> Result<CellPre> {
    if !crate::system::hyperbolic_at_nodes(basis, &state.h) {
        return Err(SgError::hyperbolicity(format!(
            "height {:.3e} at a quadrature node",
            crate::system::min_node_height(basis, &state.h)
        )));
    }
    let op = HeightOperator::new(basis, &state.h, config.desing_eps)?;
    let vel = op.velocities(&state.qx, &state.qy);
    let g = config.g;
    let k = state.h.len();
    let php = &op.p_h * &state.h;
    let puu = basis.galerkin_apply(&vel.u, &vel.u);
    let pvv = basis.galerkin_apply(&vel.v, &vel.v);
    let energy = 0.5 * (vel.qx.dot(&vel.u) + vel.qy.dot(&vel.v))
        + 0.5 * g * state.h.norm_squared()
        + g * state.h.dot(b);
    let mut vent = DVector::zeros(3 * k);
    vent.rows_mut(0, k)
        .copy_from(&(-0.5 * &puu - 0.5 * &pvv + (&state.h + b) * g));
    vent.rows_mut(k, k).copy_from(&vel.u);
    vent.rows_mut(2 * k, k).copy_from(&vel.v);
    let psi = 0.5 * g * vel.u.dot(&php);
    let phi = 0.5 * g * vel.v.dot(&php);
    let h_mean = state.h[0];
    let speed_scale = vel.u[0]
        .abs()
        .max(vel.v[0].abs())
        .max((g * h_mean.max(0.0)).sqrt());
    let deterministic = tail_max(&state.h) <= DETERMINISTIC_TOL * h_mean.abs()
        && tail_max(&vel.u) <= DETERMINISTIC_TOL * speed_scale
        && tail_max(&vel.v) <= DETERMINISTIC_TOL * speed_scale;
    Ok(CellPre {
        op,
        u: vel.u,
        v: vel.v,
        php,
        vent,
        energy,
        psi,
        phi,
        h_mean,
        deterministic,
    })
}

/// Spectral-radius estimate of the linearized diffusion `Q dV/dU` of one
/// interface acting on one adjacent cell, by power iteration. This is the
/// stiffness the explicit stages must resolve; it exceeds the wave speeds
/// where the interface and cell height scales differ strongly.
fn diffusion_rate(basis: &PceBasis, es: &EsData, cell: &CellPre, g: f64) -> f64 {
    if let (Some(det3), true) = (&es.basis.det3, cell.deterministic) {
        return deterministic_diffusion_rate(det3, cell.h_mean, cell.u[0], cell.v[0], g);
    }
    let n = es.basis.lam_abs.len();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut rho = 0.0;
    for _ in 0..6 {
        let mv = entropy_hessian_apply(basis, &cell.op, &cell.u, &cell.v, g, &v);
        let w = &es.basis.t * es.basis.lam_abs.component_mul(&(es.basis.t.transpose() * mv));
        let norm = w.norm();
        if !(norm > 1e-300) {
            return 0.0;
        }
        rho = norm;
        v = w / norm;
    }
    // Headroom for power-iteration underestimation.
    rho * 1.25
}

/// 3x3 variant of the rate estimate for deterministic interface and cell.
fn deterministic_diffusion_rate(det3: &Det3, h: f64, u: f64, v: f64, g: f64) -> f64 {
    if !(h > 0.0) {
        return 0.0;
    }
    let mut q3 = [[0.0f64; 3]; 3];
    for (col, lam) in det3.t3.iter().zip(det3.lam_abs3) {
        for r in 0..3 {
            for c in 0..3 {
                q3[r][c] += col[r] * lam * col[c];
            }
        }
    }
    let m3 = [
        [g + (u * u + v * v) / h, -u / h, -v / h],
        [-u / h, 1.0 / h, 0.0],
        [-v / h, 0.0, 1.0 / h],
    ];
    let mut vec = [1.0f64; 3];
    let mut rho = 0.0;
    for _ in 0..8 {
        let mut mv = [0.0f64; 3];
        for r in 0..3 {
            mv[r] = m3[r][0] * vec[0] + m3[r][1] * vec[1] + m3[r][2] * vec[2];
        }
        let mut w = [0.0f64; 3];
        for r in 0..3 {
            w[r] = q3[r][0] * mv[0] + q3[r][1] * mv[1] + q3[r][2] * mv[2];
        }
        let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if !(norm > 1e-300) {
            return 0.0;
        }
        rho = norm;
        for (vi, wi) in vec.iter_mut().zip(w) {
            *vi = wi / norm;
        }
    }
    rho * 1.25
}

/// Deterministic interface data: the 3x3 eigen structure whose tensor
/// product with the identity is the full basis.
#[derive(Clone, Copy)]
struct Det3 {
    /// Scaled eigenvector columns of the 3x3 deterministic Jacobian.
    t3: [[f64; 3]; 3],
    lam_abs3: [f64; 3],
}

/// Frozen eigen data of one interface, reusable across the stages of one
/// time step (the entropy-variable jump is recomputed per stage).
#[derive(Clone)]
pub struct EsBasis {
    t: DMatrix<f64>,
    lam_abs: DVector<f64>,
    det3: Option<Det3>,
}

/// Per-interface eigen bases of one RHS evaluation, in sweep order.
#[derive(Clone, Default)]
pub struct EsBasisCache {
    x: Vec<Option<EsBasis>>,
    y: Vec<Option<EsBasis>>,
}

/// How one RHS evaluation interacts with the per-step eigen cache.
pub(crate) enum CacheMode<'a> {
    /// Compute eigen bases and the diffusion stiffness, and return them.
    Build,
    /// Reuse previously built bases; skip the stiffness estimate.
    Reuse(&'a EsBasisCache),
    /// Neither build nor reuse.
    Off,
}

/// Diffusion spectral data at one interface: the (possibly frozen) eigen
/// basis plus the jump of the entropy variable in eigenvector coordinates,
/// `T^T [[V]]`.
struct EsData {
    basis: EsBasis,
    w_jump: DVector<f64>,
}

/// Closed-form eigen structure of a deterministic interface state: the
/// Jacobian is the 3x3 deterministic system tensored with the identity, and
/// the entropy-scaled eigenvectors are known explicitly.
fn deterministic_es_basis(
    k: usize,
    hd: f64,
    ud: f64,
    vd: f64,
    g: f64,
    dir: Direction,
    scaling: DiffusionScaling,
) -> Option<EsBasis> {
    if !(hd > 0.0) {
        return None;
    }
    let c = (g * hd).sqrt();
    // Columns ordered by ascending eigenvalue; the middle one is the shear
    // wave.
    let (lam3, mut t3) = match dir {
        Direction::X => (
            [ud - c, ud, ud + c],
            [[1.0, ud - c, vd], [0.0, 0.0, 1.0], [1.0, ud + c, vd]],
        ),
        Direction::Y => (
            [vd - c, vd, vd + c],
            [[1.0, ud, vd - c], [0.0, 1.0, 0.0], [1.0, ud, vd + c]],
        ),
    };
    for (col, t3c) in t3.iter_mut().enumerate() {
        let factor = match scaling {
            DiffusionScaling::EntropyScaled => {
                if col == 1 {
                    hd.sqrt()
                } else {
                    1.0 / (2.0 * g).sqrt()
                }
            }
            DiffusionScaling::UnitColumns => {
                let norm = (t3c[0] * t3c[0] + t3c[1] * t3c[1] + t3c[2] * t3c[2]).sqrt();
                1.0 / norm
            }
        };
        for entry in t3c.iter_mut() {
            *entry *= factor;
        }
    }
    let n = 3 * k;
    let mut t = DMatrix::zeros(n, n);
    let mut lam_abs = DVector::zeros(n);
    for bc in 0..3 {
        for kk in 0..k {
            lam_abs[bc * k + kk] = lam3[bc].abs();
            for br in 0..3 {
                t[(br * k + kk, bc * k + kk)] = t3[bc][br];
            }
        }
    }
    Some(EsBasis {
        t,
        lam_abs,
        det3: Some(Det3 {
            t3,
            lam_abs3: [lam3[0].abs(), lam3[1].abs(), lam3[2].abs()],
        }),
    })
}

/// Rebase eigenvector columns so `T T^T` equals the inverse energy Hessian
/// exactly; `None` when the basis is too ill-conditioned to scale.
///
/// `Y = T^-1 H T^-T` commutes with the eigenvalues, hence is block-diagonal
/// over eigenvalue clusters (sorted ascending, so clusters are contiguous);
/// its Cholesky factor therefore only mixes eigenvectors within a cluster,
/// and `T chol(Y)` is still an eigenvector matrix.
fn entropy_scaled_basis(
    basis: &PceBasis,
    p_h: &DMatrix<f64>,
    u: &Coeffs,
    v: &Coeffs,
    g: f64,
    t: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let hess_inv = entropy_hessian_inverse(basis, p_h, u, v, g);
    let lu = t.clone().lu();
    let b1 = lu.solve(&hess_inv)?;
    let y = lu.solve(&b1.transpose())?;
    let y = (&y + y.transpose()) * 0.5;
    if y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = nalgebra::linalg::Cholesky::new(y)?;
    Some(t * chol.l())
}

/// Assembled quantities of one interface.
struct IfaceData {
    ec: DVector<f64>,
    vent_avg: DVector<f64>,
    pot_avg: f64,
    /// `(g/4) [[B]]^T P(h_bar) [[u]]`, the bottom correction of the energy
    /// flux.
    b_term: f64,
    /// `P(h_bar) [[B]]`, the interfacial well-balanced source contribution.
    src: Coeffs,
    b_jump: Coeffs,
    es: Option<EsData>,
}

fn build_iface(
    basis: &PceBasis,
    config: &SchemeConfig,
    dir: Direction,
    left: (&CellState, &CellPre, &Coeffs),
    right: (&CellState, &CellPre, &Coeffs),
    need_es: bool,
    reuse: Option<&EsBasis>,
) -> Result<IfaceData> {
    let (sl, pl, bl) = left;
    let (sr, pr, br) = right;
    let g = config.g;
    let k = sl.h.len();

    let hbar = (&sl.h + &sr.h) * 0.5;
    let ubar = (&pl.u + &pr.u) * 0.5;
    let vbar = (&pl.v + &pr.v) * 0.5;
    let php_bar = (&pl.php + &pr.php) * 0.5;
    let b_jump = br - bl;
    let p_hbar = basis.galerkin_matrix(&hbar);
    let pu_bar = basis.galerkin_matrix(&ubar);
    let pv_bar = basis.galerkin_matrix(&vbar);

    // Normal mass flux P(h_bar) * (u_bar or v_bar).
    let m = match dir {
        Direction::X => &p_hbar * &ubar,
        Direction::Y => &p_hbar * &vbar,
    };
    let mut ec = DVector::zeros(3 * k);
    ec.rows_mut(0, k).copy_from(&m);
    match dir {
        Direction::X => {
            ec.rows_mut(k, k)
                .copy_from(&(&php_bar * (0.5 * g) + &pu_bar * &m));
            ec.rows_mut(2 * k, k).copy_from(&(&pv_bar * &m));
        }
        Direction::Y => {
            ec.rows_mut(k, k).copy_from(&(&pu_bar * &m));
            ec.rows_mut(2 * k, k)
                .copy_from(&(&php_bar * (0.5 * g) + &pv_bar * &m));
        }
    }

    let vent_avg = (&pl.vent + &pr.vent) * 0.5;
    let pot_avg = match dir {
        Direction::X => 0.5 * (pl.psi + pr.psi),
        Direction::Y => 0.5 * (pl.phi + pr.phi),
    };
    let vel_jump = match dir {
        Direction::X => &pr.u - &pl.u,
        Direction::Y => &pr.v - &pl.v,
    };
    let b_term = 0.25 * g * b_jump.dot(&(&p_hbar * &vel_jump));
    let src = &p_hbar * &b_jump;
    let v_jump = &pr.vent - &pl.vent;

    let es = if !need_es {
        None
    } else if let Some(frozen) = reuse {
        let w_jump = frozen.t.transpose() * &v_jump;
        Some(EsData {
            basis: frozen.clone(),
            w_jump,
        })
    } else {
        let fast = pl.deterministic && pr.deterministic;
        let es_basis = if fast {
            deterministic_es_basis(k, hbar[0], ubar[0], vbar[0], g, dir, config.diffusion_scaling)
        } else {
            None
        };
        let es_basis = match es_basis {
            Some(b) => b,
            None => {
                // Roe-type averaged state assembled from the interfacial
                // averages.
                let op = HeightOperator::from_matrix(p_hbar, config.desing_eps).map_err(|_| {
                    SgError::hyperbolicity("averaged interface state lost positivity".to_string())
                })?;
                let roe_vel = Velocities {
                    qx: &op.p_h * &ubar,
                    qy: &op.p_h * &vbar,
                    u: ubar,
                    v: vbar,
                };
                let jac = jacobian_from_parts(basis, &op, &roe_vel, g, dir);
                let eig = real_eig(&jac)?;
                let t = match config.diffusion_scaling {
                    DiffusionScaling::EntropyScaled => {
                        entropy_scaled_basis(basis, &op.p_h, &roe_vel.u, &roe_vel.v, g, &eig.t)
                            .unwrap_or_else(|| eig.t.clone())
                    }
                    DiffusionScaling::UnitColumns => eig.t.clone(),
                };
                EsBasis {
                    t,
                    lam_abs: eig.lambda.abs(),
                    det3: None,
                }
            }
        };
        let w_jump = es_basis.t.transpose() * &v_jump;
        Some(EsData {
            basis: es_basis,
            w_jump,
        })
    };

    Ok(IfaceData {
        ec,
        vent_avg,
        pot_avg,
        b_term,
        src,
        b_jump,
        es,
    })
}

/// Numerical flux and energy flux of the interface at `pos` inside a sweep
/// line; ES2 reads the limiter stencil from the neighbors at `pos - 1` and
/// `pos + 1`.
fn assemble_flux(config: &SchemeConfig, line: &[IfaceData], pos: usize) -> (DVector<f64>, f64) {
    let data = &line[pos];
    let flux = match config.scheme {
        Scheme::Ec => data.ec.clone(),
        Scheme::Es1 => {
            let es = data.es.as_ref().expect("ES data present for ES1");
            let scaled = es.basis.lam_abs.component_mul(&es.w_jump);
            &data.ec - 0.5 * (&es.basis.t * scaled)
        }
        Scheme::Es2 => {
            let es = data.es.as_ref().expect("ES data present for ES2");
            let w_prev = &line[pos - 1].es.as_ref().expect("stencil").w_jump;
            let w_next = &line[pos + 1].es.as_ref().expect("stencil").w_jump;
            let mut limited = es.w_jump.clone();
            for l in 0..limited.len() {
                limited[l] *= limiter_factor(w_prev[l], es.w_jump[l], w_next[l]);
            }
            let scaled = es.basis.lam_abs.component_mul(&limited);
            &data.ec - 0.5 * (&es.basis.t * scaled)
        }
    };
    let energy_flux = data.vent_avg.dot(&flux) - data.pot_avg - data.b_term;
    (flux, energy_flux)
}

/// Interface fluxes and numerical energy fluxes of one RHS evaluation.
#[derive(Debug, Clone)]
pub struct InterfaceFluxes {
    mx: usize,
    my: usize,
    /// x-fluxes, `(mx + 1) * my`, row-major over the interface index.
    fx: Vec<DVector<f64>>,
    /// y-fluxes, `mx * (my + 1)`, column-major over the interface index.
    gy: Vec<DVector<f64>>,
    hx: Vec<f64>,
    ky: Vec<f64>,
}

impl InterfaceFluxes {
    /// x-flux through interface `i + 1/2` of row `j` (`i` in `0..=mx`).
    pub fn fx(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.fx[j * (self.mx + 1) + i]
    }

    /// y-flux through interface `j + 1/2` of column `i` (`j` in `0..=my`).
    pub fn gy(&self, i: usize, j: usize) -> &DVector<f64> {
        &self.gy[i * (self.my + 1) + j]
    }

    /// Numerical energy flux paired with [`InterfaceFluxes::fx`].
    pub fn hx(&self, i: usize, j: usize) -> f64 {
        self.hx[j * (self.mx + 1) + i]
    }

    /// Numerical energy flux paired with [`InterfaceFluxes::gy`].
    pub fn ky(&self, i: usize, j: usize) -> f64 {
        self.ky[i * (self.my + 1) + j]
    }
}

/// Result of one semi-discrete RHS evaluation.
#[derive(Debug, Clone)]
pub struct RhsOutput {
    /// Time derivative of every interior cell, row-major `j * mx + i`.
    pub dudt: Vec<CellState>,
    pub fluxes: InterfaceFluxes,
    /// Energy of every interior cell.
    pub energy: Vec<f64>,
    /// Entropy variable of every interior cell.
    pub entropy_v: Vec<DVector<f64>>,
    /// Largest per-cell rate of the linearized ES diffusion; an explicit
    /// step must resolve `dt * max_stiffness` within the stability region.
    pub max_stiffness: f64,
}

impl RhsOutput {
    pub fn total_energy(&self) -> f64 {
        self.energy.iter().sum()
    }
}

/// Evaluate the semi-discrete operator on a field with filled ghost cells.
pub fn semidiscrete_rhs(
    basis: &PceBasis,
    field: &StateField,
    config: &SchemeConfig,
) -> Result<RhsOutput> {
    Ok(semidiscrete_rhs_cached(basis, field, config, CacheMode::Build)?.0)
}

/// As [`semidiscrete_rhs`], threading the per-step eigen-basis cache: the
/// interface bases (and the stiffness estimate) are computed once per step
/// and reused by the remaining stages.
pub(crate) fn semidiscrete_rhs_cached(
    basis: &PceBasis,
    field: &StateField,
    config: &SchemeConfig,
    mode: CacheMode<'_>,
) -> Result<(RhsOutput, Option<EsBasisCache>)> {
    let k = field.k();
    assert_eq!(k, basis.len(), "field and basis disagree on K");
    let mesh = field.mesh;
    let (mx, my) = (mesh.mx, mesh.my);
    let (dx, dy) = (mesh.dx(), mesh.dy());
    let nx = mx + 2 * GHOST;
    let ny = my + 2 * GHOST;
    let need_es = config.scheme != Scheme::Ec;
    let es2 = config.scheme == Scheme::Es2;

    // Per-cell precompute over the extended grid, ghosts included.
    let mut pre = Vec::with_capacity(nx * ny);
    for ej in 0..ny {
        for ei in 0..nx {
            let p = cell_pre(
                basis,
                field.cell_ext(ei, ej),
                field.bottom_ext(ei, ej),
                config,
            )
            .map_err(|e| {
                let ii = ei.clamp(GHOST, mx + GHOST - 1) - GHOST;
                let jj = ej.clamp(GHOST, my + GHOST - 1) - GHOST;
                e.at_cell(ii, jj)
            })?;
            pre.push(p);
        }
    }
    let pre_at = |ei: usize, ej: usize| &pre[ej * nx + ei];

    let mut fx = Vec::with_capacity((mx + 1) * my);
    let mut hx = Vec::with_capacity((mx + 1) * my);
    let mut gy = Vec::with_capacity(mx * (my + 1));
    let mut ky = Vec::with_capacity(mx * (my + 1));
    let mut src_x: Vec<Coeffs> = vec![DVector::zeros(k); mx * my];
    let mut src_y: Vec<Coeffs> = vec![DVector::zeros(k); mx * my];
    let mut stiffness = vec![0.0f64; mx * my];
    let wb = config.source == SourceKind::WellBalanced;
    let g = config.g;
    let build_cache = matches!(mode, CacheMode::Build) && need_es;
    let want_stiffness = matches!(mode, CacheMode::Build);
    let reuse_cache = match &mode {
        CacheMode::Reuse(c) => Some(*c),
        _ => None,
    };
    let mut cache = if build_cache {
        Some(EsBasisCache::default())
    } else {
        None
    };
    let mut x_counter = 0usize;
    let mut y_counter = 0usize;

    // x-direction sweep, one interior row at a time. Flux interfaces sit
    // between extended cells (a, a+1) for a in 1..=mx+1; ES2 needs the
    // limiter stencil one interface beyond on each side.
    let a_lo = if es2 { 0 } else { 1 };
    let a_hi = if es2 { mx + 2 } else { mx + 1 };
    for jj in 0..my {
        let ej = jj + GHOST;
        let mut line = Vec::with_capacity(a_hi - a_lo + 1);
        for a in a_lo..=a_hi {
            let reuse = reuse_cache.map(|c| c.x[x_counter].as_ref()).flatten();
            let data = build_iface(
                basis,
                config,
                Direction::X,
                (
                    field.cell_ext(a, ej),
                    pre_at(a, ej),
                    field.bottom_ext(a, ej),
                ),
                (
                    field.cell_ext(a + 1, ej),
                    pre_at(a + 1, ej),
                    field.bottom_ext(a + 1, ej),
                ),
                need_es,
                reuse,
            )?;
            if let Some(cache) = cache.as_mut() {
                cache.x.push(data.es.as_ref().map(|es| es.basis.clone()));
            }
            x_counter += 1;
            line.push(data);
        }
        for af in 1..=mx + 1 {
            let pos = af - a_lo;
            let (flux, energy_flux) = assemble_flux(config, &line, pos);
            let data = &line[pos];
            // The interfacial source term feeds both adjacent cells, as
            // does the diffusion stiffness estimate.
            if af >= GHOST {
                let cell = jj * mx + (af - GHOST);
                if wb {
                    src_x[cell] += &data.src;
                } else {
                    src_x[cell] += &data.b_jump;
                }
                if want_stiffness {
                    if let Some(es) = &data.es {
                        stiffness[cell] +=
                            diffusion_rate(basis, es, pre_at(af, ej), g) / (2.0 * dx);
                    }
                }
            }
            if af <= mx {
                let cell = jj * mx + (af - 1);
                if wb {
                    src_x[cell] += &data.src;
                } else {
                    src_x[cell] += &data.b_jump;
                }
                if want_stiffness {
                    if let Some(es) = &data.es {
                        stiffness[cell] +=
                            diffusion_rate(basis, es, pre_at(af + 1, ej), g) / (2.0 * dx);
                    }
                }
            }
            fx.push(flux);
            hx.push(energy_flux);
        }
    }

    // y-direction sweep, one interior column at a time.
    for ii in 0..mx {
        let ei = ii + GHOST;
        let mut line = Vec::with_capacity(a_hi - a_lo + 1);
        let b_lo = if es2 { 0 } else { 1 };
        let b_hi = if es2 { my + 2 } else { my + 1 };
        for b in b_lo..=b_hi {
            let reuse = reuse_cache.map(|c| c.y[y_counter].as_ref()).flatten();
            let data = build_iface(
                basis,
                config,
                Direction::Y,
                (
                    field.cell_ext(ei, b),
                    pre_at(ei, b),
                    field.bottom_ext(ei, b),
                ),
                (
                    field.cell_ext(ei, b + 1),
                    pre_at(ei, b + 1),
                    field.bottom_ext(ei, b + 1),
                ),
                need_es,
                reuse,
            )?;
            if let Some(cache) = cache.as_mut() {
                cache.y.push(data.es.as_ref().map(|es| es.basis.clone()));
            }
            y_counter += 1;
            line.push(data);
        }
        for bf in 1..=my + 1 {
            let pos = bf - b_lo;
            let (flux, energy_flux) = assemble_flux(config, &line, pos);
            let data = &line[pos];
            if bf >= GHOST {
                let cell = (bf - GHOST) * mx + ii;
                if wb {
                    src_y[cell] += &data.src;
                } else {
                    src_y[cell] += &data.b_jump;
                }
                if want_stiffness {
                    if let Some(es) = &data.es {
                        stiffness[cell] +=
                            diffusion_rate(basis, es, pre_at(ei, bf), g) / (2.0 * dy);
                    }
                }
            }
            if bf <= my {
                let cell = (bf - 1) * mx + ii;
                if wb {
                    src_y[cell] += &data.src;
                } else {
                    src_y[cell] += &data.b_jump;
                }
                if want_stiffness {
                    if let Some(es) = &data.es {
                        stiffness[cell] +=
                            diffusion_rate(basis, es, pre_at(ei, bf + 1), g) / (2.0 * dy);
                    }
                }
            }
            gy.push(flux);
            ky.push(energy_flux);
        }
    }

    let fluxes = InterfaceFluxes { mx, my, fx, gy, hx, ky };
    let max_stiffness = stiffness.iter().copied().fold(0.0f64, f64::max);

    let mut dudt = Vec::with_capacity(mx * my);
    let mut energy = Vec::with_capacity(mx * my);
    let mut entropy_v = Vec::with_capacity(mx * my);
    for jj in 0..my {
        for ii in 0..mx {
            let cell = jj * mx + ii;
            let fe = fluxes.fx(ii + 1, jj);
            let fw = fluxes.fx(ii, jj);
            let gn = fluxes.gy(ii, jj + 1);
            let gs = fluxes.gy(ii, jj);
            let mut du = (fw - fe) / dx + (gs - gn) / dy;
            let sx = if wb {
                &src_x[cell] * (-g / (2.0 * dx))
            } else {
                basis.galerkin_apply(&field.cell(ii, jj).h, &src_x[cell]) * (-g / (2.0 * dx))
            };
            let sy = if wb {
                &src_y[cell] * (-g / (2.0 * dy))
            } else {
                basis.galerkin_apply(&field.cell(ii, jj).h, &src_y[cell]) * (-g / (2.0 * dy))
            };
            for r in 0..k {
                du[k + r] += sx[r];
                du[2 * k + r] += sy[r];
            }
            let p = pre_at(ii + GHOST, jj + GHOST);
            dudt.push(CellState::from_stacked(&du));
            energy.push(p.energy);
            entropy_v.push(p.vent.clone());
        }
    }

    Ok((
        RhsOutput {
            dudt,
            fluxes,
            energy,
            entropy_v,
            max_stiffness,
        },
        cache,
    ))
}

/// Energy-conservative x-flux of a pair of states.
pub fn ec_flux_x(
    basis: &PceBasis,
    left: &CellState,
    right: &CellState,
    g: f64,
    desing_eps: f64,
) -> Result<DVector<f64>> {
    pair_flux(basis, left, right, g, desing_eps, Direction::X)
}

/// Energy-conservative y-flux of a pair of states.
pub fn ec_flux_y(
    basis: &PceBasis,
    left: &CellState,
    right: &CellState,
    g: f64,
    desing_eps: f64,
) -> Result<DVector<f64>> {
    pair_flux(basis, left, right, g, desing_eps, Direction::Y)
}

fn pair_flux(
    basis: &PceBasis,
    left: &CellState,
    right: &CellState,
    g: f64,
    desing_eps: f64,
    dir: Direction,
) -> Result<DVector<f64>> {
    let mut config = SchemeConfig::new(Scheme::Ec);
    config.g = g;
    config.desing_eps = desing_eps;
    let zero = DVector::zeros(left.h.len());
    let pl = cell_pre(basis, left, &zero, &config)?;
    let pr = cell_pre(basis, right, &zero, &config)?;
    let data = build_iface(
        basis,
        &config,
        dir,
        (left, &pl, &zero),
        (right, &pr, &zero),
        false,
        None,
    )?;
    Ok(data.ec)
}

/// Well-balanced source of one cell from the height averages and bottom
/// jumps at its west/east and south/north interfaces.
pub fn wb_source(
    basis: &PceBasis,
    x_faces: [(&Coeffs, &Coeffs); 2],
    y_faces: [(&Coeffs, &Coeffs); 2],
    g: f64,
    dx: f64,
    dy: f64,
) -> DVector<f64> {
    let k = x_faces[0].0.len();
    let mut s = DVector::zeros(3 * k);
    let mut sx = DVector::zeros(k);
    for (hbar, b_jump) in x_faces {
        sx += basis.galerkin_apply(hbar, b_jump);
    }
    let mut sy = DVector::zeros(k);
    for (hbar, b_jump) in y_faces {
        sy += basis.galerkin_apply(hbar, b_jump);
    }
    s.rows_mut(k, k).copy_from(&(sx * (-g / (2.0 * dx))));
    s.rows_mut(2 * k, k).copy_from(&(sy * (-g / (2.0 * dy))));
    s
}

/// Roe-type diffusion matrix `T |Lambda| T^T` at the averaged state of an
/// interface.
pub fn es_diffusion_matrix(
    basis: &PceBasis,
    left: &CellState,
    right: &CellState,
    direction: Direction,
    g: f64,
    desing_eps: f64,
    scaling: DiffusionScaling,
) -> Result<DMatrix<f64>> {
    let hbar = (&left.h + &right.h) * 0.5;
    let op = HeightOperator::new(basis, &hbar, desing_eps)?;
    let vl = op_velocities(basis, left, desing_eps)?;
    let vr = op_velocities(basis, right, desing_eps)?;
    let ubar = (&vl.u + &vr.u) * 0.5;
    let vbar = (&vl.v + &vr.v) * 0.5;
    let roe_vel = Velocities {
        qx: &op.p_h * &ubar,
        qy: &op.p_h * &vbar,
        u: ubar,
        v: vbar,
    };
    let jac = jacobian_from_parts(basis, &op, &roe_vel, g, direction);
    let eig = real_eig(&jac)?;
    let t = match scaling {
        DiffusionScaling::EntropyScaled => {
            entropy_scaled_basis(basis, &op.p_h, &roe_vel.u, &roe_vel.v, g, &eig.t)
                .unwrap_or_else(|| eig.t.clone())
        }
        DiffusionScaling::UnitColumns => eig.t.clone(),
    };
    let lam_abs = eig.lambda.abs();
    Ok(&t * DMatrix::from_diagonal(&lam_abs) * t.transpose())
}

fn op_velocities(basis: &PceBasis, state: &CellState, desing_eps: f64) -> Result<Velocities> {
    let op = HeightOperator::new(basis, &state.h, desing_eps)?;
    Ok(op.velocities(&state.qx, &state.qy))
}

/// Numerical energy flux of an interface given the numerical flux actually
/// used there.
pub fn numerical_energy_flux(
    basis: &PceBasis,
    left: (&CellState, &Coeffs),
    right: (&CellState, &Coeffs),
    flux: &DVector<f64>,
    direction: Direction,
    g: f64,
    desing_eps: f64,
) -> Result<f64> {
    let ql = crate::system::entropy_quantities(basis, left.0, left.1, g, desing_eps)?;
    let qr = crate::system::entropy_quantities(basis, right.0, right.1, g, desing_eps)?;
    energy_flux_from_quantities(basis, left, right, &ql, &qr, flux, direction, g, desing_eps)
}

#[allow(clippy::too_many_arguments)]
fn energy_flux_from_quantities(
    basis: &PceBasis,
    left: (&CellState, &Coeffs),
    right: (&CellState, &Coeffs),
    ql: &EntropyQuantities,
    qr: &EntropyQuantities,
    flux: &DVector<f64>,
    direction: Direction,
    g: f64,
    desing_eps: f64,
) -> Result<f64> {
    let vent_avg = (&ql.v + &qr.v) * 0.5;
    let pot_avg = match direction {
        Direction::X => 0.5 * (ql.psi + qr.psi),
        Direction::Y => 0.5 * (ql.phi + qr.phi),
    };
    let hbar = (&left.0.h + &right.0.h) * 0.5;
    let b_jump = right.1 - left.1;
    let vl = op_velocities(basis, left.0, desing_eps)?;
    let vr = op_velocities(basis, right.0, desing_eps)?;
    let vel_jump = match direction {
        Direction::X => &vr.u - &vl.u,
        Direction::Y => &vr.v - &vl.v,
    };
    let b_term = 0.25 * g * b_jump.dot(&basis.galerkin_apply(&hbar, &vel_jump));
    Ok(vent_avg.dot(flux) - pot_avg - b_term)
}
