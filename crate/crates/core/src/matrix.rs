//! Dense and sparse matrix storage plus the small set of numerical kernels the
//! estimators need: norms, singular values, Gram products and `p x p` solves.
//!
//! Everything is column-major. Designs are tall (`n >= p`) and `p` is assumed
//! small enough that `O(p^3)` work is negligible next to a pass over the data.

use std::fmt;

use thiserror::Error;

/// Relative pivot threshold below which a square system is declared singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-12;
/// Relative residual every accepted solve must meet.
pub const SOLVE_RESIDUAL_RTOL: f64 = 1e-8;
/// Relative tolerance for rank deficiency in [`condition_number`].
pub const RANK_RTOL: f64 = 1e-12;
/// Default relative tolerance for [`spectral_norm`].
pub const DEFAULT_POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("invalid sparse column {col}: {reason}")]
    InvalidSparse { col: usize, reason: String },
    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NonConvergence { estimate: f64, iterations: usize },
    #[error("matrix is rank deficient (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    RankDeficient { sigma_min: f64, sigma_max: f64 },
    #[error("singular system: pivot {pivot:e} below {threshold:e}")]
    SingularSystem { pivot: f64, threshold: f64 },
    #[error("solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    InaccurateSolve { residual: f64, tolerance: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

pub type Result<T> = std::result::Result<T, MatrixError>;

/// Anything that can be multiplied against a vector from either side.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = M x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = M^T x`
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]);
    fn sum_of_squares(&self) -> f64;
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators keep the loop vectorizable without changing semantics
    // beyond rounding order.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// General column-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.nrows, self.ncols)?;
        for i in 0..self.nrows.min(12) {
            let row: Vec<String> = (0..self.ncols.min(12))
                .map(|j| format!("{:>10.4}", self.get(i, j)))
                .collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_col_major(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(MatrixError::DimensionMismatch { expected: nrows * ncols, got: data.len() });
        }
        Ok(DenseMatrix { nrows, ncols, data })
    }

    /// Builds from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = Self::zeros(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(MatrixError::DimensionMismatch { expected: ncols, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nrows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.nrows + i] = v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.nrows;
        &mut self.data[j * n..(j + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.ncols, self.nrows);
        for j in 0..self.ncols {
            for i in 0..self.nrows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.apply(x, &mut out);
        out
    }

    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.apply_transpose(x, &mut out);
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.ncols != other.nrows {
            return Err(MatrixError::DimensionMismatch { expected: self.ncols, got: other.nrows });
        }
        let mut out = Self::zeros(self.nrows, other.ncols);
        for j in 0..other.ncols {
            let dst = &mut out.data[j * self.nrows..(j + 1) * self.nrows];
            for k in 0..self.ncols {
                let b = other.get(k, j);
                if b != 0.0 {
                    axpy(b, self.col(k), dst);
                }
            }
        }
        Ok(out)
    }

    /// `self^T self`, symmetric, computed from column dot products.
    pub fn gram(&self) -> DenseMatrix {
        let p = self.ncols;
        let mut g = Self::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = dot(self.col(i), self.col(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(MatrixError::InvalidShape(format!(
                "{}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseMatrix { nrows: self.nrows, ncols: self.ncols, data })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        DenseMatrix::nrows(self)
    }
    fn ncols(&self) -> usize {
        DenseMatrix::ncols(self)
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(xj, self.col(j), out);
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot(self.col(j), x);
        }
    }
    fn sum_of_squares(&self) -> f64 {
        dot(&self.data, &self.data)
    }
}

/// Tall `n x p` predictor matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    inner: DenseMatrix,
    centered: bool,
}

impl DesignMatrix {
    /// Validates `n >= p >= 1` and finiteness. `values` is column-major.
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_dense(DenseMatrix::from_col_major(n, p, values)?)
    }

    pub fn from_dense(inner: DenseMatrix) -> Result<Self> {
        let (n, p) = (inner.nrows, inner.ncols);
        if p == 0 || n < p {
            return Err(MatrixError::InvalidShape(format!(
                "design must satisfy n >= p >= 1, got {n}x{p}"
            )));
        }
        if let Some(pos) = inner.data.iter().position(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite { row: pos % n, col: pos / n });
        }
        Ok(DesignMatrix { inner, centered: false })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_dense(DenseMatrix::from_rows(rows)?)
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Clears the centering flag, e.g. after rows were replaced.
    pub fn mark_uncentered(&mut self) {
        self.centered = false;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn col(&self, j: usize) -> &[f64] {
        self.inner.col(j)
    }

    pub fn as_dense(&self) -> &DenseMatrix {
        &self.inner
    }

    pub fn into_dense(self) -> DenseMatrix {
        self.inner
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.nrows() as f64;
        (0..self.ncols()).map(|j| self.col(j).iter().sum::<f64>() / n).collect()
    }

    /// Subtracts column means in place and sets the centering flag.
    pub fn center(&mut self) {
        let means = self.column_means();
        for (j, m) in means.into_iter().enumerate() {
            self.inner.col_mut(j).iter_mut().for_each(|v| *v -= m);
        }
        self.centered = true;
    }

    /// Mutable column access. Callers must keep entries finite; the centering
    /// flag is cleared.
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        self.centered = false;
        self.inner.col_mut(j)
    }

    /// Overwrites row `i`. Clears the centering flag.
    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        assert_eq!(row.len(), self.ncols());
        self.centered = false;
        for (j, &v) in row.iter().enumerate() {
            self.inner.set(i, j, v);
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols()).map(|j| self.get(i, j)).collect()
    }

    /// Copies the given rows, in the given order, into a new dense matrix.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(rows.len(), self.ncols());
        for j in 0..self.ncols() {
            let src = self.col(j);
            let dst = out.col_mut(j);
            for (d, &i) in dst.iter_mut().zip(rows) {
                *d = src[i];
            }
        }
        out
    }

    /// `X^T X`.
    pub fn gram(&self) -> DenseMatrix {
        self.inner.gram()
    }

    /// `X beta`.
    pub fn matvec(&self, beta: &[f64]) -> Vec<f64> {
        self.inner.matvec(beta)
    }

    /// `X^T y`.
    pub fn tmatvec(&self, y: &[f64]) -> Vec<f64> {
        self.inner.tmatvec(y)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }
}

impl LinearOperator for DesignMatrix {
    fn nrows(&self) -> usize {
        self.inner.nrows
    }
    fn ncols(&self) -> usize {
        self.inner.ncols
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.inner.apply(x, out)
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.inner.apply_transpose(x, out)
    }
    fn sum_of_squares(&self) -> f64 {
        self.inner.sum_of_squares()
    }
}

/// Compressed sparse column storage. Row indices are strictly increasing
/// within a column and stored values are never exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseColumnMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseColumnMatrix {
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        SparseColumnMatrix {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from per-column `(row, value)` lists, validating every invariant.
    pub fn from_columns(nrows: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let ncols = columns.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0);
        let nnz = columns.iter().map(Vec::len).sum();
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for (j, col) in columns.into_iter().enumerate() {
            let mut prev: Option<usize> = None;
            for (i, v) in col {
                if i >= nrows {
                    return Err(MatrixError::InvalidSparse {
                        col: j,
                        reason: format!("row index {i} out of range {nrows}"),
                    });
                }
                if prev.is_some_and(|p| p >= i) {
                    return Err(MatrixError::InvalidSparse {
                        col: j,
                        reason: "row indices not strictly increasing".into(),
                    });
                }
                if v == 0.0 {
                    return Err(MatrixError::InvalidSparse { col: j, reason: "explicit zero".into() });
                }
                if !v.is_finite() {
                    return Err(MatrixError::NonFinite { row: i, col: j });
                }
                prev = Some(i);
                row_idx.push(i);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(SparseColumnMatrix { nrows, ncols, col_ptr, row_idx, values })
    }

    /// Unchecked assembly used by the selection kernel, which upholds the
    /// invariants by construction.
    pub(crate) fn from_raw_parts(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(col_ptr.len(), ncols + 1);
        debug_assert_eq!(row_idx.len(), values.len());
        SparseColumnMatrix { nrows, ncols, col_ptr, row_idx, values }
    }

    /// Keeps every nonzero of a dense matrix.
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..m.ncols {
            for (i, &v) in m.col(j).iter().enumerate() {
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SparseColumnMatrix { nrows: m.nrows, ncols: m.ncols, col_ptr, row_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Row indices and values of column `j`.
    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            let (rows, vals) = self.column(j);
            let col = m.col_mut(j);
            for (&i, &v) in rows.iter().zip(vals) {
                col[i] = v;
            }
        }
        m
    }

    pub fn tmatvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.apply_transpose(y, &mut out);
        out
    }

    /// `self^T self` using sorted-index merges per column pair.
    pub fn self_gram(&self) -> DenseMatrix {
        let p = self.ncols;
        let mut g = DenseMatrix::zeros(p, p);
        for a in 0..p {
            let (ra, va) = self.column(a);
            g.set(a, a, dot(va, va));
            for b in a + 1..p {
                let (rb, vb) = self.column(b);
                let (mut i, mut k, mut s) = (0, 0, 0.0);
                while i < ra.len() && k < rb.len() {
                    match ra[i].cmp(&rb[k]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => k += 1,
                        std::cmp::Ordering::Equal => {
                            s += va[i] * vb[k];
                            i += 1;
                            k += 1;
                        }
                    }
                }
                g.set(a, b, s);
                g.set(b, a, s);
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }
}

impl LinearOperator for SparseColumnMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            let (rows, vals) = self.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                out[i] += v * xj;
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let (rows, vals) = self.column(j);
            *o = rows.iter().zip(vals).map(|(&i, &v)| v * x[i]).sum();
        }
    }
    fn sum_of_squares(&self) -> f64 {
        dot(&self.values, &self.values)
    }
}

pub fn frobenius_norm<M: LinearOperator + ?Sized>(m: &M) -> f64 {
    m.sum_of_squares().sqrt()
}

/// Largest singular value by power iteration on `M^T M`.
///
/// Starts from the normalized all-ones vector so results are reproducible.
/// Convergence is declared when successive estimates agree to `tol`
/// relatively; otherwise `NonConvergence` carries the last estimate.
pub fn spectral_norm<M: LinearOperator + ?Sized>(m: &M, tol: f64, max_iter: usize) -> Result<f64> {
    let (nr, nc) = (m.nrows(), m.ncols());
    if nr == 0 || nc == 0 {
        return Ok(0.0);
    }
    let mut w = vec![0.0; nr];
    let mut u = vec![0.0; nc];
    // All-ones first; unit vectors only if the start lies in the null space.
    let starts = std::iter::once(None).chain((0..nc).map(Some));
    for start in starts {
        let mut v = match start {
            None => vec![1.0 / (nc as f64).sqrt(); nc],
            Some(k) => {
                let mut e = vec![0.0; nc];
                e[k] = 1.0;
                e
            }
        };
        m.apply(&v, &mut w);
        let mut sigma = norm2(&w);
        if sigma == 0.0 {
            continue;
        }
        for it in 1..=max_iter {
            m.apply_transpose(&w, &mut u);
            let un = norm2(&u);
            if un == 0.0 {
                return Ok(sigma);
            }
            v.iter_mut().zip(&u).for_each(|(vi, ui)| *vi = ui / un);
            m.apply(&v, &mut w);
            let next = norm2(&w);
            if (next - sigma).abs() < tol * next {
                return Ok(next);
            }
            sigma = next;
            if it == max_iter {
                return Err(MatrixError::NonConvergence { estimate: sigma, iterations: it });
            }
        }
        return Err(MatrixError::NonConvergence { estimate: sigma, iterations: max_iter });
    }
    Ok(0.0)
}

/// [`spectral_norm`] with `tol = 1e-9` and `max_iter = 10 n`.
pub fn spectral_norm_default<M: LinearOperator + ?Sized>(m: &M) -> Result<f64> {
    spectral_norm(m, DEFAULT_POWER_TOL, 10 * m.nrows().max(m.ncols()))
}

/// Upper-triangular factor of a Householder QR of a tall matrix.
fn householder_r(a: &DenseMatrix) -> DenseMatrix {
    let (n, p) = (a.nrows, a.ncols);
    let mut w = a.clone();
    let mut v = vec![0.0; n];
    for k in 0..p.min(n) {
        let x = &w.col(k)[k..];
        let alpha = norm2(x);
        if alpha == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -alpha } else { alpha };
        let len = n - k;
        v[..len].copy_from_slice(x);
        v[0] -= alpha;
        let vn = norm2(&v[..len]);
        if vn == 0.0 {
            continue;
        }
        v[..len].iter_mut().for_each(|e| *e /= vn);
        for j in k..p {
            let col = &mut w.col_mut(j)[k..];
            let s = 2.0 * dot(&v[..len], col);
            axpy(-s, &v[..len], col);
        }
    }
    let m = p.min(n);
    let mut r = DenseMatrix::zeros(m, p);
    for j in 0..p {
        for i in 0..=j.min(m - 1) {
            r.set(i, j, w.get(i, j));
        }
    }
    r
}

/// One-sided (Hestenes) Jacobi on the columns of `a`; returns column norms
/// of the orthogonalized matrix, i.e. the singular values, unsorted.
fn one_sided_jacobi(mut a: DenseMatrix) -> Vec<f64> {
    let p = a.ncols;
    let eps = f64::EPSILON;
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let alpha = dot(a.col(i), a.col(i));
                let beta = dot(a.col(j), a.col(j));
                let gamma = dot(a.col(i), a.col(j));
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let n = a.nrows;
                for r in 0..n {
                    let ai = a.data[i * n + r];
                    let aj = a.data[j * n + r];
                    a.data[i * n + r] = c * ai - s * aj;
                    a.data[j * n + r] = s * ai + c * aj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..p).map(|j| norm2(a.col(j))).collect()
}

/// All singular values in descending order. Tall inputs are first reduced
/// to their `R` factor; wide inputs are transposed.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.nrows < m.ncols {
        return singular_values(&m.transpose());
    }
    let r = if m.nrows > m.ncols { householder_r(m) } else { m.clone() };
    let mut s = one_sided_jacobi(r);
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Eigenvalues of a symmetric matrix, descending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    let n = a.nrows;
    if a.ncols != n {
        return Err(MatrixError::InvalidShape(format!("{}x{} is not square", n, a.ncols)));
    }
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| m.get(i, i).powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// `sigma_max / sigma_min` of a design matrix.
pub fn condition_number(x: &DesignMatrix) -> Result<f64> {
    let s = singular_values(x.as_dense());
    let (smax, smin) = (s[0], *s.last().unwrap());
    if smax == 0.0 || smin < RANK_RTOL * smax {
        return Err(MatrixError::RankDeficient { sigma_min: smin, sigma_max: smax });
    }
    Ok(smax / smin)
}

/// LU factorization with partial pivoting of a general square matrix.
#[derive(Clone, Debug)]
pub struct LuFactorization {
    lu: DenseMatrix,
    perm: Vec<usize>,
    original: DenseMatrix,
}

impl LuFactorization {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        let n = a.nrows;
        if a.ncols != n {
            return Err(MatrixError::InvalidShape(format!("{}x{} is not square", n, a.ncols)));
        }
        let scale = a.max_abs();
        let threshold = SINGULAR_PIVOT_RTOL * scale;
        if scale == 0.0 || !scale.is_finite() {
            return Err(MatrixError::SingularSystem { pivot: 0.0, threshold });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv_row, piv_abs) = (k..n)
                .map(|i| (i, lu.get(i, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_abs < threshold || piv_abs == 0.0 {
                return Err(MatrixError::SingularSystem { pivot: piv_abs, threshold });
            }
            if piv_row != k {
                perm.swap(k, piv_row);
                for j in 0..n {
                    let tmp = lu.get(k, j);
                    lu.set(k, j, lu.get(piv_row, j));
                    lu.set(piv_row, j, tmp);
                }
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / pivot;
                lu.set(i, k, f);
            }
            for j in k + 1..n {
                let ukj = lu.get(k, j);
                if ukj == 0.0 {
                    continue;
                }
                for i in k + 1..n {
                    let v = lu.get(i, j) - lu.get(i, k) * ukj;
                    lu.set(i, j, v);
                }
            }
        }
        Ok(LuFactorization { lu, perm, original: a.clone() })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows
    }

    fn substitute(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut z: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lu.get(i, k) * z[k];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.lu.get(i, k) * z[k];
            }
            z[i] = s / self.lu.get(i, i);
        }
        z
    }

    /// Solves `A z = b`, with one step of iterative refinement, and enforces
    /// the residual contract `||A z - b|| <= 1e-8 ||b||`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(MatrixError::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut z = self.substitute(b);
        let residual = |z: &[f64]| -> Vec<f64> {
            let az = self.original.matvec(z);
            az.iter().zip(b).map(|(a, bi)| bi - a).collect()
        };
        let mut res = residual(&z);
        let bnorm = norm2(b);
        let tolerance = SOLVE_RESIDUAL_RTOL * bnorm;
        if norm2(&res) > 0.0 {
            let dz = self.substitute(&res);
            let refined: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a + d).collect();
            let rres = residual(&refined);
            if norm2(&rres) <= norm2(&res) {
                z = refined;
                res = rres;
            }
        }
        let rn = norm2(&res);
        if !(rn <= tolerance) {
            return Err(MatrixError::InaccurateSolve { residual: rn, tolerance });
        }
        Ok(z)
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(b.nrows, b.ncols);
        for j in 0..b.ncols {
            let z = self.solve(b.col(j))?;
            out.col_mut(j).copy_from_slice(&z);
        }
        Ok(out)
    }
}

/// Solves `a z = b` for a general (possibly non-symmetric) square `a`.
pub fn gram_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    LuFactorization::new(a)?.solve(b)
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.nrows;
    if a.ncols != n {
        return Err(MatrixError::InvalidShape(format!("{}x{} is not square", n, a.ncols)));
    }
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(MatrixError::NotPositiveDefinite);
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// `X*^T X`: entry `(i, j)` sums `value * x[row, j]` over the stored entries
/// of sketch column `i`. Cost is `nnz(sketch) * p`.
pub fn sparse_gram(xstar: &SparseColumnMatrix, x: &DesignMatrix) -> Result<DenseMatrix> {
    if xstar.nrows() != x.nrows() || xstar.ncols() != x.ncols() {
        return Err(MatrixError::InvalidShape(format!(
            "sketch {}x{} vs design {}x{}",
            xstar.nrows(),
            xstar.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let p = x.ncols();
    let mut g = DenseMatrix::zeros(p, p);
    for i in 0..p {
        let (rows, vals) = xstar.column(i);
        for j in 0..p {
            let xj = x.col(j);
            let s: f64 = rows.iter().zip(vals).map(|(&r, &v)| v * xj[r]).sum();
            g.set(i, j, s);
        }
    }
    Ok(g)
}
