//! Orthonormal polynomial chaos bases over product Beta measures.
//!
//! Each dimension carries a Jacobi weight `(1-x)^alpha (1+x)^beta` on
//! `[-1, 1]`, normalized to a probability density. The multivariate basis is
//! the tensor product of the one-dimensional orthonormal families, ordered
//! lexicographically with dimension 1 varying fastest, so the constant
//! polynomial is always first. Quadrature is the tensorized Gauss rule sized
//! so that every triple product of basis polynomials is integrated exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::SgError;
use crate::Result;

/// Coefficient vector of a random field in the chaos basis (length `K`).
pub type Coeffs = DVector<f64>;

/// One dimension of a product Beta measure: Jacobi exponents and the number
/// of basis polynomials (degrees `0..order`).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaDim {
    /// Exponent of `(1 - x)`; must exceed -1.
    pub alpha: f64,
    /// Exponent of `(1 + x)`; must exceed -1.
    pub beta: f64,
    /// Number of one-dimensional basis polynomials, at least 1.
    pub order: usize,
}

/// Product Beta measure specification.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpec {
    pub dims: Vec<BetaDim>,
}

impl MeasureSpec {
    /// Uniform measure on `[-1, 1]` in one dimension (Legendre basis).
    pub fn uniform_1d(order: usize) -> Self {
        Self::jacobi_1d(0.0, 0.0, order)
    }

    /// One-dimensional Jacobi measure with exponents `(alpha, beta)`.
    pub fn jacobi_1d(alpha: f64, beta: f64, order: usize) -> Self {
        MeasureSpec {
            dims: vec![BetaDim { alpha, beta, order }],
        }
    }

    /// Total basis size, the product of per-dimension orders.
    pub fn basis_size(&self) -> usize {
        self.dims.iter().map(|d| d.order).product()
    }

    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(SgError::InvalidMeasure("no dimensions given".into()));
        }
        for (idx, d) in self.dims.iter().enumerate() {
            if !(d.alpha.is_finite() && d.alpha > -1.0) {
                return Err(SgError::InvalidMeasure(format!(
                    "dimension {idx}: alpha = {} must be > -1",
                    d.alpha
                )));
            }
            if !(d.beta.is_finite() && d.beta > -1.0) {
                return Err(SgError::InvalidMeasure(format!(
                    "dimension {idx}: beta = {} must be > -1",
                    d.beta
                )));
            }
            if d.order < 1 {
                return Err(SgError::InvalidMeasure(format!(
                    "dimension {idx}: order must be at least 1"
                )));
            }
        }
        Ok(())
    }
}

/// Recurrence data and quadrature for one dimension.
#[derive(Debug, Clone)]
struct Dim1d {
    /// Diagonal recurrence coefficients `a_0..a_{m-1}`.
    rec_a: Vec<f64>,
    /// Square roots of the off-diagonal coefficients `b_1..b_{m-1}`.
    rec_sqrt_b: Vec<f64>,
    /// Per-degree normalization enforced against the quadrature Gram matrix.
    scale: Vec<f64>,
    /// Gauss nodes, ascending.
    nodes: Vec<f64>,
    /// Gauss weights (sum to 1 for the probability measure).
    weights: Vec<f64>,
}

/// An orthonormal chaos basis: index set, quadrature, node values, and the
/// triple-product tensor backing the Galerkin multiplication operator.
#[derive(Debug, Clone)]
pub struct PceBasis {
    measure: MeasureSpec,
    k: usize,
    index_set: Vec<Vec<usize>>,
    /// Flattened `K x K x K` tensor of triple products, symmetric under all
    /// permutations of its indices by construction.
    triple: Vec<f64>,
    quad_nodes: Vec<Vec<f64>>,
    quad_weights: Vec<f64>,
    /// `N x K` matrix of basis values at the quadrature nodes.
    node_values: DMatrix<f64>,
    dims: Vec<Dim1d>,
}

/// Probability-normalized Jacobi recurrence coefficients `(a_n, b_n)` for the
/// weight `(1-x)^alpha (1+x)^beta`; `b_0 = 1` by normalization.
fn jacobi_recurrence(alpha: f64, beta: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let s = alpha + beta;
    for n in 0..m {
        let nf = n as f64;
        if n == 0 {
            a.push((beta - alpha) / (s + 2.0));
        } else {
            let den = (2.0 * nf + s) * (2.0 * nf + s + 2.0);
            a.push((beta * beta - alpha * alpha) / den);
        }
    }
    b.push(1.0);
    for n in 1..m {
        let nf = n as f64;
        let val = if n == 1 {
            // n = 1 written with the (1 + alpha + beta) factor cancelled so
            // alpha + beta = -1 does not produce 0/0.
            4.0 * (alpha + 1.0) * (beta + 1.0) / ((s + 2.0).powi(2) * (s + 3.0))
        } else {
            4.0 * nf * (nf + alpha) * (nf + beta) * (nf + s)
                / ((2.0 * nf + s).powi(2) * (2.0 * nf + s + 1.0) * (2.0 * nf + s - 1.0))
        };
        b.push(val);
    }
    (a, b)
}

/// Gauss nodes and weights for the probability-normalized Jacobi measure via
/// the Golub-Welsch eigenproblem of the symmetric Jacobi matrix.
fn gauss_rule(rec_a: &[f64], rec_b: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        jac[(i, i)] = rec_a[i];
        if i + 1 < n {
            let off = rec_b[i + 1].sqrt();
            jac[(i, i + 1)] = off;
            jac[(i + 1, i)] = off;
        }
    }
    let eig = nalgebra::linalg::SymmetricEigen::try_new(jac, f64::EPSILON, 10_000)
        .ok_or(SgError::EigenFailure { n })?;
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2);
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Values of the orthonormal polynomials of degrees `0..count` at `x`,
/// without the Gram-based rescaling.
fn recurrence_values(rec_a: &[f64], rec_sqrt_b: &[f64], count: usize, x: f64) -> Vec<f64> {
    let mut vals = Vec::with_capacity(count);
    let mut prev = 0.0;
    let mut cur = 1.0;
    vals.push(cur);
    for n in 0..count.saturating_sub(1) {
        let next = ((x - rec_a[n]) * cur - if n == 0 { 0.0 } else { rec_sqrt_b[n - 1] * prev })
            / rec_sqrt_b[n];
        prev = cur;
        cur = next;
        vals.push(cur);
    }
    vals
}

impl Dim1d {
    fn build(dim: &BetaDim) -> Result<Self> {
        // Each triple product has per-dimension degree at most 3(order - 1);
        // one extra node of margin beyond the exactness requirement.
        let degree = 3 * (dim.order - 1) + 1;
        let n_nodes = degree.div_ceil(2) + 1;
        let m = n_nodes.max(dim.order);
        let (rec_a, rec_b) = jacobi_recurrence(dim.alpha, dim.beta, m);
        let rec_sqrt_b: Vec<f64> = rec_b.iter().skip(1).map(|v| v.sqrt()).collect();
        let (nodes, weights) = gauss_rule(&rec_a, &rec_b, n_nodes)?;

        // Normalize each polynomial against the quadrature Gram diagonal.
        let mut scale = vec![0.0; dim.order];
        for (x, w) in nodes.iter().zip(&weights) {
            let vals = recurrence_values(&rec_a, &rec_sqrt_b, dim.order, *x);
            for (s, v) in scale.iter_mut().zip(&vals) {
                *s += w * v * v;
            }
        }
        for s in scale.iter_mut() {
            if *s <= 0.0 {
                return Err(SgError::InvalidMeasure(
                    "quadrature produced a non-positive polynomial norm".into(),
                ));
            }
            *s = 1.0 / s.sqrt();
        }
        Ok(Dim1d {
            rec_a,
            rec_sqrt_b,
            scale,
            nodes,
            weights,
        })
    }

    fn values(&self, x: f64) -> Vec<f64> {
        let mut vals = recurrence_values(&self.rec_a, &self.rec_sqrt_b, self.scale.len(), x);
        for (v, s) in vals.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        vals
    }
}

/// All tuples over the given radices, lexicographic with the first entry
/// varying fastest.
fn lexicographic_tuples(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut m in 0..total {
        let mut tuple = Vec::with_capacity(radices.len());
        for &r in radices {
            tuple.push(m % r);
            m /= r;
        }
        out.push(tuple);
    }
    out
}

impl PceBasis {
    /// Build the orthonormal tensor-product basis, quadrature, node values,
    /// and triple-product tensor for a product Beta measure.
    pub fn build(measure: MeasureSpec) -> Result<Self> {
        measure.validate()?;
        let dims: Vec<Dim1d> = measure
            .dims
            .iter()
            .map(Dim1d::build)
            .collect::<Result<_>>()?;
        let k = measure.basis_size();

        let orders: Vec<usize> = measure.dims.iter().map(|d| d.order).collect();
        let index_set = lexicographic_tuples(&orders);

        let node_counts: Vec<usize> = dims.iter().map(|d| d.nodes.len()).collect();
        let node_tuples = lexicographic_tuples(&node_counts);
        let n_nodes = node_tuples.len();

        let mut quad_nodes = Vec::with_capacity(n_nodes);
        let mut quad_weights = Vec::with_capacity(n_nodes);
        let mut node_values = DMatrix::<f64>::zeros(n_nodes, k);
        for (n, tuple) in node_tuples.iter().enumerate() {
            let mut point = Vec::with_capacity(dims.len());
            let mut weight = 1.0;
            let mut per_dim_vals = Vec::with_capacity(dims.len());
            for (d, &ni) in dims.iter().zip(tuple) {
                point.push(d.nodes[ni]);
                weight *= d.weights[ni];
                per_dim_vals.push(d.values(d.nodes[ni]));
            }
            for (kk, degrees) in index_set.iter().enumerate() {
                let mut v = 1.0;
                for (d, &deg) in degrees.iter().enumerate() {
                    v *= per_dim_vals[d][deg];
                }
                node_values[(n, kk)] = v;
            }
            quad_nodes.push(point);
            quad_weights.push(weight);
        }

        // Triple products evaluated once per sorted index triple and mirrored,
        // so permutation symmetry holds exactly in floating point.
        let mut triple = vec![0.0; k * k * k];
        for a in 0..k {
            for b in a..k {
                for c in b..k {
                    let mut v = 0.0;
                    for n in 0..n_nodes {
                        v += quad_weights[n]
                            * node_values[(n, a)]
                            * node_values[(n, b)]
                            * node_values[(n, c)];
                    }
                    for (p, q, r) in [
                        (a, b, c),
                        (a, c, b),
                        (b, a, c),
                        (b, c, a),
                        (c, a, b),
                        (c, b, a),
                    ] {
                        triple[(p * k + q) * k + r] = v;
                    }
                }
            }
        }

        Ok(PceBasis {
            measure,
            k,
            index_set,
            triple,
            quad_nodes,
            quad_weights,
            node_values,
            dims,
        })
    }

    /// Total basis size `K`.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Stochastic dimension `d`.
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn measure(&self) -> &MeasureSpec {
        &self.measure
    }

    /// Multi-index (per-dimension degrees) of basis polynomial `k`, 0-based.
    pub fn index_set(&self) -> &[Vec<usize>] {
        &self.index_set
    }

    /// Triple product of basis polynomials `(k, l, m)`, 0-based.
    pub fn triple(&self, k: usize, l: usize, m: usize) -> f64 {
        self.triple[(k * self.k + l) * self.k + m]
    }

    pub fn quad_len(&self) -> usize {
        self.quad_nodes.len()
    }

    pub fn quad_nodes(&self) -> &[Vec<f64>] {
        &self.quad_nodes
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Value of basis polynomial `k` at quadrature node `n`.
    pub fn node_value(&self, n: usize, k: usize) -> f64 {
        self.node_values[(n, k)]
    }

    /// Evaluate a coefficient vector at quadrature node `n`.
    pub fn evaluate_at_node(&self, n: usize, z: &Coeffs) -> f64 {
        assert_eq!(z.len(), self.k, "coefficient length must match basis size");
        let mut acc = 0.0;
        for k in 0..self.k {
            acc += z[k] * self.node_values[(n, k)];
        }
        acc
    }

    /// The Galerkin multiplication matrix of `z`: the symmetric `K x K`
    /// matrix representing multiplication by the field `z` followed by
    /// projection back onto the basis.
    pub fn galerkin_matrix(&self, z: &Coeffs) -> DMatrix<f64> {
        assert_eq!(z.len(), self.k, "coefficient length must match basis size");
        let k = self.k;
        let mut m = DMatrix::<f64>::zeros(k, k);
        for kk in 0..k {
            let zk = z[kk];
            if zk == 0.0 {
                continue;
            }
            let base = kk * k * k;
            for l in 0..k {
                let row = base + l * k;
                for c in 0..k {
                    m[(l, c)] += zk * self.triple[row + c];
                }
            }
        }
        m
    }

    /// Project a function of the random parameter onto the basis using the
    /// built-in quadrature.
    pub fn project(&self, f: impl Fn(&[f64]) -> f64) -> Coeffs {
        let mut z = DVector::zeros(self.k);
        for (n, point) in self.quad_nodes.iter().enumerate() {
            let fw = self.quad_weights[n] * f(point);
            for k in 0..self.k {
                z[k] += fw * self.node_values[(n, k)];
            }
        }
        z
    }

    /// Evaluate a coefficient vector at an arbitrary parameter point.
    pub fn evaluate(&self, z: &Coeffs, xi: &[f64]) -> f64 {
        assert_eq!(z.len(), self.k, "coefficient length must match basis size");
        assert_eq!(xi.len(), self.dim(), "point dimension must match measure");
        let per_dim: Vec<Vec<f64>> = self
            .dims
            .iter()
            .zip(xi)
            .map(|(d, &x)| d.values(x))
            .collect();
        let mut acc = 0.0;
        for (k, degrees) in self.index_set.iter().enumerate() {
            let mut v = z[k];
            for (d, &deg) in degrees.iter().enumerate() {
                v *= per_dim[d][deg];
            }
            acc += v;
        }
        acc
    }

    /// Quadrature Gram matrix of the basis; identity up to quadrature
    /// rounding.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::<f64>::zeros(self.k, self.k);
        for n in 0..self.quad_len() {
            let w = self.quad_weights[n];
            for a in 0..self.k {
                let va = self.node_values[(n, a)];
                for b in 0..self.k {
                    g[(a, b)] += w * va * self.node_values[(n, b)];
                }
            }
        }
        g
    }
}

/// Mean and standard deviation of the random field with coefficients `z`:
/// the mean is the leading coefficient and the variance is the sum of
/// squares of the remaining ones.
pub fn mean_std(z: &Coeffs) -> (f64, f64) {
    let mean = z[0];
    let var: f64 = z.iter().skip(1).map(|v| v * v).sum();
    (mean, var.sqrt())
}
