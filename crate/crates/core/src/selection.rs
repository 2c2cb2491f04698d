//! Core-elements sketch construction: keep the `r` largest-magnitude entries
//! of every column and zero out the rest.
//!
//! Per column the `r`-th largest magnitude is located with a partition-based
//! selection (`select_nth_unstable`, an introselect) over the magnitudes'
//! bit patterns, followed by one linear scan. Ties at the boundary go to the
//! smaller row index, so the mask is a deterministic function of the data.

use log::warn;
use thiserror::Error;

use crate::matrix::{DenseMatrix, DesignMatrix, MatrixError, SparseColumnMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("selection budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Number of elements kept per column. The total element budget is `r * p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SketchBudget(usize);

impl SketchBudget {
    pub fn new(r: usize) -> Result<Self, SelectionError> {
        if r == 0 {
            return Err(SelectionError::ZeroBudget);
        }
        Ok(SketchBudget(r))
    }

    pub fn per_column(self) -> usize {
        self.0
    }

    pub fn total(self, p: usize) -> usize {
        self.0 * p
    }
}

/// Selected row indices per column, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    nrows: usize,
    columns: Vec<Vec<usize>>,
}

impl SelectionMask {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[usize] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.columns[j].binary_search(&i).is_ok()
    }

    /// Applies the mask to `x`, keeping nonzero selected entries.
    pub fn apply(&self, x: &DesignMatrix) -> SparseColumnMatrix {
        let mut col_ptr = Vec::with_capacity(self.columns.len() + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for (j, rows) in self.columns.iter().enumerate() {
            let col = x.col(j);
            for &i in rows {
                let v = col[i];
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SparseColumnMatrix::from_raw_parts(x.nrows(), x.ncols(), col_ptr, row_idx, values)
    }
}

/// Top-`r` rows of one column by `(|value| desc, row asc)`, returned ascending.
/// `scratch` is reused across columns.
fn top_r_rows(col: &[f64], r: usize, scratch: &mut Vec<u64>, out: &mut Vec<usize>) {
    let n = col.len();
    out.clear();
    if r >= n {
        out.extend(0..n);
        return;
    }
    // For non-negative finite floats the IEEE bit pattern is order preserving.
    scratch.clear();
    scratch.extend(col.iter().map(|v| v.abs().to_bits()));
    let cut = n - r;
    let (_, &mut threshold, upper) = scratch.select_nth_unstable(cut);
    let strictly_greater = upper.iter().filter(|&&k| k > threshold).count();
    let mut ties_left = r - strictly_greater;
    out.reserve(r);
    for (i, v) in col.iter().enumerate() {
        let k = v.abs().to_bits();
        if k > threshold {
            out.push(i);
        } else if k == threshold && ties_left > 0 {
            out.push(i);
            ties_left -= 1;
        }
    }
    debug_assert_eq!(out.len(), r);
}

/// Builds the selection mask and the sketch `X*` for budget `r` per column.
///
/// `r > n` is clamped to `n`. Selected entries that are exactly zero stay in
/// the mask but are not stored in the sketch.
pub fn select_core_elements(x: &DesignMatrix, budget: SketchBudget) -> (SelectionMask, SparseColumnMatrix) {
    let (n, p) = (x.nrows(), x.ncols());
    let mut r = budget.per_column();
    if r > n {
        warn!("selection budget r = {r} exceeds n = {n}; clamping to n");
        r = n;
    }
    if r < p {
        warn!("selection budget r = {r} is below p = {p}; the sketch Gram may be singular");
    }
    let mut scratch = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(r);
    let mut columns = Vec::with_capacity(p);
    let mut col_ptr = Vec::with_capacity(p + 1);
    col_ptr.push(0);
    let mut row_idx = Vec::with_capacity(r * p);
    let mut values = Vec::with_capacity(r * p);
    for j in 0..p {
        let col = x.col(j);
        top_r_rows(col, r, &mut scratch, &mut rows);
        for &i in &rows {
            let v = col[i];
            if v != 0.0 {
                row_idx.push(i);
                values.push(v);
            }
        }
        col_ptr.push(row_idx.len());
        columns.push(rows.clone());
    }
    let sketch = SparseColumnMatrix::from_raw_parts(n, p, col_ptr, row_idx, values);
    (SelectionMask { nrows: n, columns }, sketch)
}

/// `L = X - X*`, dense. Diagnostic use only.
pub fn residual_matrix(x: &DesignMatrix, sketch: &SparseColumnMatrix) -> Result<DesignMatrix, SelectionError> {
    if sketch.nrows() != x.nrows() || sketch.ncols() != x.ncols() {
        return Err(MatrixError::InvalidShape(format!(
            "sketch {}x{} vs design {}x{}",
            sketch.nrows(),
            sketch.ncols(),
            x.nrows(),
            x.ncols()
        ))
        .into());
    }
    let mut l: DenseMatrix = x.as_dense().clone();
    for j in 0..x.ncols() {
        let (rows, vals) = sketch.column(j);
        let col = l.col_mut(j);
        for (&i, &v) in rows.iter().zip(vals) {
            col[i] -= v;
        }
    }
    Ok(DesignMatrix::from_dense(l)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> DesignMatrix {
        DesignMatrix::from_rows(&[[3.0, -1.0], [-5.0, 2.0], [1.0, -4.0], [2.0, 0.0]]).unwrap()
    }

    /// Full sort per column, ties by row index.
    fn sort_oracle(col: &[f64], r: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..col.len()).collect();
        idx.sort_by(|&a, &b| col[b].abs().total_cmp(&col[a].abs()).then(a.cmp(&b)));
        let mut top = idx[..r.min(col.len())].to_vec();
        top.sort_unstable();
        top
    }

    #[test]
    fn worked_example() {
        let x = example();
        let (mask, sketch) = select_core_elements(&x, SketchBudget::new(2).unwrap());
        // 0-based rows: column 0 keeps -5 and 3, column 1 keeps 2 and -4.
        assert_eq!(mask.column(0), &[0, 1]);
        assert_eq!(mask.column(1), &[1, 2]);
        for j in 0..2 {
            assert_eq!(mask.column(j), sort_oracle(x.col(j), 2).as_slice());
        }
        assert_eq!(sketch.column(0), (&[0usize, 1][..], &[3.0, -5.0][..]));
        assert_eq!(sketch.column(1), (&[1usize, 2][..], &[2.0, -4.0][..]));
    }

    #[test]
    fn full_selection_densifies_back() {
        let x = example();
        let (mask, sketch) = select_core_elements(&x, SketchBudget::new(4).unwrap());
        assert!(mask.columns().iter().all(|c| c == &[0, 1, 2, 3]));
        assert_eq!(&sketch.to_dense(), x.as_dense());
        // Clamped budget behaves the same.
        let (mask2, _) = select_core_elements(&x, SketchBudget::new(99).unwrap());
        assert_eq!(mask, mask2);
    }

    #[test]
    fn zero_column_keeps_mask_but_not_storage() {
        let x = DesignMatrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]).unwrap();
        let (mask, sketch) = select_core_elements(&x, SketchBudget::new(2).unwrap());
        assert_eq!(mask.column(1), &[0, 1]);
        assert_eq!(sketch.column(1).0.len(), 0);
        assert_eq!(mask.column(0), &[1, 2]);
    }

    #[test]
    fn ties_prefer_smaller_rows() {
        let x = DesignMatrix::from_rows(&[[1.0], [-2.0], [2.0], [2.0], [0.5]]).unwrap();
        let (mask, _) = select_core_elements(&x, SketchBudget::new(2).unwrap());
        assert_eq!(mask.column(0), &[1, 2]);
    }

    #[test]
    fn residual_examples() {
        let x = example();
        let (_, full) = select_core_elements(&x, SketchBudget::new(4).unwrap());
        assert_eq!(residual_matrix(&x, &full).unwrap().frobenius_norm(), 0.0);
        let empty = SparseColumnMatrix::empty(4, 2);
        assert_eq!(residual_matrix(&x, &empty).unwrap(), x);
        let (mask, sketch) = select_core_elements(&x, SketchBudget::new(2).unwrap());
        let l = residual_matrix(&x, &sketch).unwrap();
        for j in 0..2 {
            for i in 0..4 {
                let expected = if mask.contains(i, j) { 0.0 } else { x.get(i, j) };
                assert_eq!(l.get(i, j), expected);
            }
        }
    }

    #[test]
    fn zero_budget_rejected() {
        assert_eq!(SketchBudget::new(0), Err(SelectionError::ZeroBudget));
    }
}
