//! Small dense eigen/solve kernels.
//!
//! Every matrix here is tiny (`K x K` or `3K x 3K` with `K` in the single or
//! low double digits), evaluated once per cell or per interface, so the
//! kernels favor robustness over asymptotics. Symmetric problems go through
//! a tridiagonalization eigensolver; nonsymmetric ones through a Hessenberg
//! reduction and shifted-QR Schur decomposition followed by eigenvector
//! back-substitution.

use nalgebra::{DMatrix, DVector};

use crate::error::SgError;
use crate::Result;

/// Relative tolerance on imaginary parts before a spectrum is declared
/// non-real.
const IMAG_TOL: f64 = 1e-8;

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Orthogonal eigenvector matrix, columns matching `pi`.
    pub q: DMatrix<f64>,
    /// Eigenvalues in descending order.
    pub pi: DVector<f64>,
}

impl SymEig {
    /// Apply `Q f(Pi) Q^T` to a vector, with `f` mapping each eigenvalue.
    pub fn apply_spectral(&self, f: impl Fn(f64) -> f64, x: &DVector<f64>) -> DVector<f64> {
        let mut y = self.q.transpose() * x;
        for (i, v) in y.iter_mut().enumerate() {
            *v *= f(self.pi[i]);
        }
        &self.q * y
    }

    /// Assemble `Q f(Pi) Q^T` as a matrix.
    pub fn spectral_matrix(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.pi.len();
        let mut scaled = self.q.clone();
        for j in 0..n {
            let fj = f(self.pi[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.q.transpose()
    }
}

/// Eigendecomposition of a real matrix with (numerically) real spectrum,
/// eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct RealEig {
    /// Eigenvector matrix, one column per eigenvalue.
    pub t: DMatrix<f64>,
    /// Eigenvalues in ascending order, tiny imaginary parts truncated.
    pub lambda: DVector<f64>,
}

/// Column scaling of the eigenvector matrix returned by [`real_eig_scaled`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigvecScaling {
    /// Unit Euclidean norm per column.
    #[default]
    UnitColumns,
    /// Keep the scaling produced by Schur back-substitution.
    SchurRaw,
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEig> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let eig = nalgebra::linalg::SymmetricEigen::try_new(a.clone(), f64::EPSILON, 20_000)
        .ok_or(SgError::EigenFailure { n })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut pi = DVector::<f64>::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        pi[dst] = eig.eigenvalues[src];
        q.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { q, pi })
}

/// Eigendecomposition of a matrix whose spectrum is real (up to rounding),
/// with unit-norm eigenvector columns.
pub fn real_eig(a: &DMatrix<f64>) -> Result<RealEig> {
    real_eig_scaled(a, EigvecScaling::UnitColumns)
}

/// As [`real_eig`] with an explicit eigenvector column scaling.
pub fn real_eig_scaled(a: &DMatrix<f64>, scaling: EigvecScaling) -> Result<RealEig> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    if n == 1 {
        return Ok(RealEig {
            t: DMatrix::from_element(1, 1, 1.0),
            lambda: DVector::from_element(1, a[(0, 0)]),
        });
    }

    let (mut q, mut t) = real_schur(a).ok_or(SgError::EigenFailure { n })?;

    // Spectral radius for the relative imaginary-part tolerance.
    let mut rho: f64 = 0.0;
    {
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != 0.0 {
                let m = 0.5 * (t[(i, i)] + t[(i + 1, i + 1)]);
                let disc = 0.25 * (t[(i, i)] - t[(i + 1, i + 1)]).powi(2)
                    + t[(i, i + 1)] * t[(i + 1, i)];
                let modulus = if disc >= 0.0 {
                    (m.abs() + disc.sqrt()).max((m.abs() - disc.sqrt()).abs())
                } else {
                    (m * m - disc).sqrt()
                };
                rho = rho.max(modulus);
                i += 2;
            } else {
                rho = rho.max(t[(i, i)].abs());
                i += 1;
            }
        }
    }

    // Reduce 2x2 diagonal blocks: rotate real pairs to triangular form,
    // truncate rounding-level complex pairs, reject genuine ones.
    let mut i = 0;
    while i + 1 < n {
        if t[(i + 1, i)] == 0.0 {
            i += 1;
            continue;
        }
        let (a11, a12) = (t[(i, i)], t[(i, i + 1)]);
        let (a21, a22) = (t[(i + 1, i)], t[(i + 1, i + 1)]);
        let mid = 0.5 * (a11 + a22);
        let disc = 0.25 * (a11 - a22).powi(2) + a12 * a21;
        if disc >= 0.0 {
            let lam = if mid >= 0.0 {
                mid + disc.sqrt()
            } else {
                mid - disc.sqrt()
            };
            // Rotation whose first column is the block eigenvector of `lam`.
            let (mut vx, mut vy) = (a12, lam - a11);
            if vx.hypot(vy) < (lam - a22).hypot(a21) {
                vx = lam - a22;
                vy = a21;
            }
            let norm = vx.hypot(vy);
            let (cs, sn) = if norm == 0.0 { (1.0, 0.0) } else { (vx / norm, vy / norm) };
            for c in 0..n {
                let (x, y) = (t[(i, c)], t[(i + 1, c)]);
                t[(i, c)] = cs * x + sn * y;
                t[(i + 1, c)] = -sn * x + cs * y;
            }
            for r in 0..n {
                let (x, y) = (t[(r, i)], t[(r, i + 1)]);
                t[(r, i)] = cs * x + sn * y;
                t[(r, i + 1)] = -sn * x + cs * y;
                let (qx, qy) = (q[(r, i)], q[(r, i + 1)]);
                q[(r, i)] = cs * qx + sn * qy;
                q[(r, i + 1)] = -sn * qx + cs * qy;
            }
        } else {
            let imag = (-disc).sqrt();
            if imag > IMAG_TOL * rho.max(f64::MIN_POSITIVE) {
                return Err(SgError::hyperbolicity(format!(
                    "flux Jacobian spectrum has imaginary part {imag:.3e} \
                     (spectral radius {rho:.3e})"
                )));
            }
            t[(i, i)] = mid;
            t[(i + 1, i + 1)] = mid;
        }
        t[(i + 1, i)] = 0.0;
        i += 2;
    }

    // Right eigenvectors of the triangular factor by back-substitution;
    // near-zero pivots are perturbed, which keeps repeated eigenvalues from
    // producing overflow while still yielding independent directions.
    let tnorm = t.abs().max().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let mut vecs = DMatrix::<f64>::zeros(n, n);
    let mut y = vec![0.0; n];
    for j in 0..n {
        let lam = t[(j, j)];
        y[j] = 1.0;
        for i in (0..j).rev() {
            let mut num = 0.0;
            for m in (i + 1)..=j {
                num += t[(i, m)] * y[m];
            }
            let mut den = t[(i, i)] - lam;
            if den.abs() < small {
                den = if den < 0.0 { -small } else { small };
            }
            y[i] = -num / den;
            if y[i].abs() > 1e100 {
                let inv = 1.0 / y[i].abs();
                for v in y[i..=j].iter_mut() {
                    *v *= inv;
                }
            }
        }
        for r in 0..n {
            let mut acc = 0.0;
            for m in 0..=j {
                acc += q[(r, m)] * y[m];
            }
            vecs[(r, j)] = acc;
        }
        y[..=j].iter_mut().for_each(|v| *v = 0.0);
    }

    if scaling == EigvecScaling::UnitColumns {
        for j in 0..n {
            let norm = vecs.column(j).norm();
            if norm > 0.0 {
                let inv = 1.0 / norm;
                for r in 0..n {
                    vecs[(r, j)] *= inv;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &r| t[(p, p)].total_cmp(&t[(r, r)]));
    let mut tm = DMatrix::<f64>::zeros(n, n);
    let mut lambda = DVector::<f64>::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        lambda[dst] = t[(src, src)];
        tm.set_column(dst, &vecs.column(src));
    }
    Ok(RealEig { t: tm, lambda })
}

/// Real Schur decomposition `A = Q T Q^T` with `T` quasi-triangular (1x1
/// and 2x2 diagonal blocks): Householder reduction to Hessenberg form
/// followed by the Francis double-shift QR iteration. Exceptional shifts
/// every tenth sweep break the stalls that tight eigenvalue clusters
/// (e.g. Jacobians of nearly deterministic states, whose spectra are
/// K-fold copies) otherwise cause.
fn real_schur(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let scale = a.abs().max().max(f64::MIN_POSITIVE);
    // Exactly coincident eigenvalue clusters with symmetric spectra can
    // cycle the shifted iteration; a graded diagonal perturbation breaks
    // every such coincidence deterministically at a cost far below the
    // eigendecomposition tolerance.
    for eta in [0.0, 1e-13, 1e-11] {
        let mut h = a.as_slice().to_vec();
        if eta > 0.0 {
            for i in 0..n {
                h[i * n + i] += eta * scale * (i + 1) as f64 / n as f64;
            }
        }
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        hessenberg(&mut h, &mut q, n);
        if francis_qr(&mut h, &mut q, n) {
            return Some((
                DMatrix::from_vec(n, n, q),
                DMatrix::from_vec(n, n, h),
            ));
        }
    }
    None
}

// The QR kernels below work on flat column-major buffers; entries of rows
// `k..k+3` within one column are adjacent, which keeps both reflector
// applications on contiguous memory.

#[inline]
fn at(m: &[f64], n: usize, r: usize, c: usize) -> f64 {
    m[c * n + r]
}

fn hessenberg(h: &mut [f64], q: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for j in 0..n - 2 {
        // Column scaled by its largest entry so denormal-level blocks
        // cannot underflow the reflector norm; divide rather than multiply
        // by a reciprocal, the quotients are bounded by one.
        let col = &h[j * n + j + 1..(j + 1) * n];
        let mut amax: f64 = 0.0;
        for &x in col {
            amax = amax.max(x.abs());
        }
        if amax == 0.0 {
            continue;
        }
        let mut norm2 = 0.0;
        for (vi, &x) in v[j + 1..n].iter_mut().zip(col) {
            let s = x / amax;
            norm2 += s * s;
            *vi = s;
        }
        let x0 = v[j + 1];
        let alpha = if x0 >= 0.0 {
            -norm2.sqrt()
        } else {
            norm2.sqrt()
        };
        v[j + 1] = x0 - alpha;
        let vn2 = norm2 - x0 * x0 + v[j + 1] * v[j + 1];
        if vn2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vn2;
        // Left: rows j+1..n of every column.
        for c in 0..n {
            let col = &mut h[c * n..(c + 1) * n];
            let mut s = 0.0;
            for i in j + 1..n {
                s += v[i] * col[i];
            }
            let bs = beta * s;
            for i in j + 1..n {
                col[i] -= bs * v[i];
            }
        }
        // Right: columns j+1..n of H and of the accumulated Q.
        for r in 0..n {
            let mut s = 0.0;
            for i in j + 1..n {
                s += h[i * n + r] * v[i];
            }
            let bs = beta * s;
            for i in j + 1..n {
                h[i * n + r] -= bs * v[i];
            }
            let mut s = 0.0;
            for i in j + 1..n {
                s += q[i * n + r] * v[i];
            }
            let bs = beta * s;
            for i in j + 1..n {
                q[i * n + r] -= bs * v[i];
            }
        }
        // Reduced entries are exactly zero by construction.
        h[j * n + j + 1] = alpha * amax;
        for i in j + 2..n {
            h[j * n + i] = 0.0;
        }
    }
}

/// One Householder reflector on `m` (2 or 3) adjacent rows/columns, applied
/// from both sides of `h` and to the columns of `q`.
#[inline]
fn apply_reflector(h: &mut [f64], q: &mut [f64], n: usize, k: usize, coords: &[f64]) {
    let m = coords.len();
    let scale: f64 = coords.iter().map(|c| c.abs()).sum();
    if scale == 0.0 {
        return;
    }
    let mut v = [0.0; 3];
    let mut norm2 = 0.0;
    for i in 0..m {
        v[i] = coords[i] / scale;
        norm2 += v[i] * v[i];
    }
    let alpha = if v[0] >= 0.0 {
        -norm2.sqrt()
    } else {
        norm2.sqrt()
    };
    v[0] -= alpha;
    let vn2: f64 = v[..m].iter().map(|c| c * c).sum();
    if vn2 == 0.0 {
        return;
    }
    let beta = 2.0 / vn2;
    // Rows k..k+m carry zeros left of column k-1 and columns k..k+m carry
    // zeros below row k+m, so the applications can skip those ranges.
    for c in k.saturating_sub(1)..n {
        let col = &mut h[c * n + k..c * n + k + m];
        let mut s = 0.0;
        for i in 0..m {
            s += v[i] * col[i];
        }
        let bs = beta * s;
        for i in 0..m {
            col[i] -= bs * v[i];
        }
    }
    let rmax = (k + m + 1).min(n);
    for r in 0..rmax {
        let mut s = 0.0;
        for i in 0..m {
            s += at(h, n, r, k + i) * v[i];
        }
        let bs = beta * s;
        for i in 0..m {
            h[(k + i) * n + r] -= bs * v[i];
        }
    }
    for r in 0..n {
        let mut s = 0.0;
        for i in 0..m {
            s += at(q, n, r, k + i) * v[i];
        }
        let bs = beta * s;
        for i in 0..m {
            q[(k + i) * n + r] -= bs * v[i];
        }
    }
}

/// One implicit double-shift sweep on the active window `[lo, hi]` with
/// shift polynomial `z^2 - t z + d`.
fn francis_step(h: &mut [f64], q: &mut [f64], n: usize, lo: usize, hi: usize, t: f64, d: f64) {
    let h00 = at(h, n, lo, lo);
    let h10 = at(h, n, lo + 1, lo);
    let x = h00 * h00 + at(h, n, lo, lo + 1) * h10 - t * h00 + d;
    let y = h10 * (h00 + at(h, n, lo + 1, lo + 1) - t);
    let z = h10 * at(h, n, lo + 2, lo + 1);
    apply_reflector(h, q, n, lo, &[x, y, z]);
    for k in lo + 1..hi {
        // Chase the bulge sitting in column k - 1.
        let vx = at(h, n, k, k - 1);
        let vy = at(h, n, k + 1, k - 1);
        if k + 2 <= hi {
            let vz = at(h, n, k + 2, k - 1);
            apply_reflector(h, q, n, k, &[vx, vy, vz]);
            h[(k - 1) * n + k + 2] = 0.0;
        } else {
            apply_reflector(h, q, n, k, &[vx, vy]);
        }
        h[(k - 1) * n + k + 1] = 0.0;
    }
}

fn francis_qr(h: &mut [f64], q: &mut [f64], n: usize) -> bool {
    if n < 3 {
        return true;
    }
    let hnorm = h
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(f64::MIN_POSITIVE);
    let mut hi = n - 1;
    let mut iters = 0usize;
    let mut total = 0usize;
    let max_total = 60 * n * n + 500;
    // Deflation threshold, relaxed when a window stalls: eigenvalue
    // clusters split at rounding level (K-fold spectra of nearly
    // deterministic states) keep subdiagonals above machine epsilon
    // indefinitely, and separating them further carries no information.
    let mut tol = f64::EPSILON;
    loop {
        // Deflation scan for the window top. The comparison scale is
        // floored at eps * |H| so blocks of a (numerically) multiple zero
        // eigenvalue, whose entries underflow toward denormals, still
        // deflate instead of iterating on rounding noise.
        let mut lo = hi;
        while lo > 0 {
            let s = at(h, n, lo - 1, lo - 1).abs() + at(h, n, lo, lo).abs();
            if at(h, n, lo, lo - 1).abs() <= tol * s.max(f64::EPSILON * hnorm) {
                h[(lo - 1) * n + lo] = 0.0;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            iters = 0;
            if hi <= 1 {
                return true;
            }
            hi -= 1;
            continue;
        }
        if lo + 1 == hi {
            // A 2x2 diagonal block remains; callers resolve it.
            iters = 0;
            if hi <= 2 {
                return true;
            }
            hi -= 2;
            continue;
        }
        iters += 1;
        total += 1;
        if total > max_total {
            return false;
        }
        if iters > 2 * (hi - lo + 1) + 12 {
            if tol >= 1e-9 {
                return false;
            }
            tol = (tol * 1e4).min(1e-9);
            iters = 0;
            continue;
        }
        let (t, d) = if iters % 10 == 0 {
            // Exceptional shift against cycling on clustered spectra.
            let s = at(h, n, hi, hi - 1).abs() + at(h, n, hi - 1, hi - 2).abs();
            let h11 = 0.75 * s + at(h, n, hi, hi);
            let h12 = -0.4375 * s;
            (h11 + h11, h11 * h11 - h12 * s)
        } else {
            let h11 = at(h, n, hi - 1, hi - 1);
            let h12 = at(h, n, hi - 1, hi);
            let h21 = at(h, n, hi, hi - 1);
            let h22 = at(h, n, hi, hi);
            (h11 + h22, h11 * h22 - h12 * h21)
        };
        francis_step(h, q, n, lo, hi, t, d);
    }
}

/// Solve `A x = b` by partial-pivot LU, rejecting near-singular systems.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    assert_eq!(n, b.len(), "right-hand side length must match");
    let lu = a.clone().lu();
    let u = lu.u();
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for i in 0..n {
        let d = u[(i, i)].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if dmin == 0.0 || dmax / dmin > 1e14 {
        return Err(SgError::SingularMatrix(format!(
            "pivot ratio {:.3e}",
            if dmin == 0.0 { f64::INFINITY } else { dmax / dmin }
        )));
    }
    lu.solve(b)
        .ok_or_else(|| SgError::SingularMatrix("LU solve failed".into()))
}
