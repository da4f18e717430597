//! Dense linear algebra and finite-difference oracles.
//!
//! Everything here is a pure function of its inputs. Reductions always run in
//! ascending index order, so repeated calls are bit-identical.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sweep cap for the cyclic Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to `‖A‖_F`.
pub const JACOBI_REL_TOL: f64 = 1e-12;
/// Relative asymmetry accepted by [`sym_eigen`].
pub const SYMMETRY_REL_TOL: f64 = 1e-10;

/// A real vector. Thin wrapper over `Vec<f64>` that derefs to a slice.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(len: usize) -> Self {
        DenseVector(vec![0.0; len])
    }

    /// Wraps `data`, rejecting NaN and infinities.
    pub fn try_from_vec(data: Vec<f64>) -> Result<Self> {
        if data.iter().all(|v| v.is_finite()) {
            Ok(DenseVector(data))
        } else {
            Err(Error::NonFinite("DenseVector"))
        }
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_l1(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_linf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(data: Vec<f64>) -> Self {
        DenseVector(data)
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Builds a matrix from row-major entries; rejects wrong lengths and non-finite values.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("DenseMatrix::from_row_major", rows * cols, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("DenseMatrix::from_rows", cols, bad.len()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dims("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Result<DenseMatrix> {
        if !self.is_square() {
            return Err(Error::dims("symmetrized", "square", format!("{}x{}", self.rows, self.cols)));
        }
        let n = self.rows;
        Ok(DenseMatrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i))))
    }

    /// Largest `|a_ij - a_ji|` divided by `max(‖A‖_F, MIN_POSITIVE)`.
    pub fn relative_asymmetry(&self) -> f64 {
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / self.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

/// Matrix product with ascending-index accumulation for every entry.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::dims(
            "matmul",
            format!("lhs cols = rhs rows = {}", a.cols),
            format!("rhs rows {}", b.rows),
        ));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    // i-k-j order still adds the k terms of each entry in ascending k.
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Option<DenseMatrix>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized before iterating; asymmetry above
/// [`SYMMETRY_REL_TOL`] (relative to `‖A‖_F`) is rejected. Iteration stops once
/// the off-diagonal Frobenius norm falls below `JACOBI_REL_TOL · ‖A‖_F`, or
/// fails after [`JACOBI_MAX_SWEEPS`] sweeps.
pub fn sym_eigen(a: &DenseMatrix, want_vectors: bool) -> Result<EigenResult> {
    if !a.is_square() {
        return Err(Error::dims("sym_eigen", "square matrix", format!("{}x{}", a.rows, a.cols)));
    }
    if !a.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sym_eigen input"));
    }
    let asym = a.relative_asymmetry();
    if asym > SYMMETRY_REL_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.rows;
    let mut m = a.symmetrized()?;
    let mut v = want_vectors.then(|| DenseMatrix::identity(n));
    let tol = JACOBI_REL_TOL * a.frobenius_norm();

    let mut converged = false;
    let mut off = off_diagonal_norm(&m);
    for sweep in 0..JACOBI_MAX_SWEEPS {
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                // Entries below the diagonals' rounding level are dropped outright.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m.set(p, q, 0.0);
                    m.set(q, p, 0.0);
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, p, q, c, s);
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        off = off_diagonal_norm(&m);
    }
    if !converged && off > tol {
        return Err(Error::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
            off_norm: off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| m.get(i, i)).collect();
    let eigenvectors = v.map(|v| DenseMatrix::from_fn(n, n, |r, c| v.get(r, order[c])));
    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
    })
}

/// `A ← Jᵀ A J` for the plane rotation in `(p, q)` with cosine `c`, sine `s`.
fn rotate(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows;
    for k in 0..n {
        let akp = m.get(k, p);
        let akq = m.get(k, q);
        m.set(k, p, c * akp - s * akq);
        m.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let apk = m.get(p, k);
        let aqk = m.get(q, k);
        m.set(p, k, c * apk - s * aqk);
        m.set(q, k, s * apk + c * aqk);
    }
}

fn off_diagonal_norm(m: &DenseMatrix) -> f64 {
    let n = m.rows;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m.get(i, j) * m.get(i, j);
            }
        }
    }
    acc.sqrt()
}

/// Smallest power of two `σ ≥ (n + 1)·max|t|`, as used by [`invariant_sum`].
fn extraction_boundary(n: usize, max_abs: f64) -> f64 {
    let bound = (n as f64 + 1.0) * max_abs;
    let exp = ((bound.to_bits() >> 52) & 0x7ff) as i64;
    if exp == 0 {
        return f64::MIN_POSITIVE;
    }
    f64::from_bits(((exp + 1) as u64) << 52)
}

/// Sum of `terms` whose value does not depend on their order.
///
/// Each term is split on a power-of-two grid fixed by the largest magnitude:
/// `q = (σ + t) − σ` and `r = t − q` are exact, and the `q` parts add up
/// exactly in any order. Doing this twice and rounding `Q₁ + Q₂` once leaves
/// an error of at most one rounding plus about `2⁻¹⁰⁰·n·max|t|`. Non-finite
/// input falls back to the plain sum, so NaN and infinities propagate.
pub fn invariant_sum(terms: &[f64]) -> f64 {
    const HUGE: f64 = 1e250;
    let plain_fallback = || terms.iter().sum::<f64>();
    let max_abs = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if !max_abs.is_finite() || terms.iter().any(|t| t.is_nan()) {
        return plain_fallback();
    }
    if max_abs == 0.0 {
        return 0.0;
    }
    if max_abs > HUGE {
        // Keep σ far from overflow; scaling by a power of two is exact.
        let scale = 2f64.powi(-600);
        let scaled: Vec<f64> = terms.iter().map(|t| t * scale).collect();
        return invariant_sum(&scaled) / scale;
    }
    let n = terms.len();
    let sigma = extraction_boundary(n, max_abs);
    let mut rest = Vec::with_capacity(n);
    let mut high = 0.0;
    let mut rest_max = 0.0f64;
    for &t in terms {
        let q = (sigma + t) - sigma;
        let r = t - q;
        high += q;
        rest_max = rest_max.max(r.abs());
        rest.push(r);
    }
    if rest_max == 0.0 {
        return high;
    }
    let sigma = extraction_boundary(n, rest_max);
    let low: f64 = rest.iter().map(|&r| (sigma + r) - sigma).sum();
    high + low
}

/// Default finite-difference step: `1e-5 · max(1, ‖x‖_∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * x.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Central-difference gradient of a scalar field.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<DenseVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("fd_gradient evaluation"));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(DenseVector(out))
}

/// Central differences of a gradient field, symmetrized as `(H + Hᵀ)/2`.
pub fn fd_hessian(mut grad: impl FnMut(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Result<DenseMatrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let n = x.len();
    let mut probe = x.to_vec();
    let mut raw = DenseMatrix::zeros(n, n);
    for j in 0..n {
        probe[j] = x[j] + h;
        let gp = grad(&probe);
        probe[j] = x[j] - h;
        let gm = grad(&probe);
        probe[j] = x[j];
        if gp.len() != n || gm.len() != n {
            return Err(Error::dims("fd_hessian gradient length", n, gp.len().max(gm.len())));
        }
        for i in 0..n {
            let d = (gp[i] - gm[i]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFinite("fd_hessian evaluation"));
            }
            raw.set(i, j, d);
        }
    }
    raw.symmetrized()
}
