//! Least squares estimators: full-sample OLS, the core-elements estimator
//! `(X*^T X)^{-1} X*^T y`, row-subsample OLS for the baselines, and leverage
//! scores.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{
    cholesky, sparse_gram, DenseMatrix, DesignMatrix, LuFactorization, MatrixError, SparseColumnMatrix,
};
use crate::selection::{select_core_elements, SelectionMask, SketchBudget};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("design is rank deficient: {0}")]
    RankDeficientDesign(MatrixError),
    #[error("sketch Gram X*^T X is singular at r = {r}: {source}")]
    SingularSketchGram { r: usize, source: MatrixError },
    #[error("row subsample is rank deficient: {0}")]
    RankDeficientSubsample(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// Which estimator produced a coefficient vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    FullOls,
    Core,
    MomCore,
    MomOls,
    RowSubsample(String),
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::FullOls => write!(f, "FULLOLS"),
            EstimatorKind::Core => write!(f, "CORE"),
            EstimatorKind::MomCore => write!(f, "MOM-CORE"),
            EstimatorKind::MomOls => write!(f, "MOM-OLS"),
            EstimatorKind::RowSubsample(name) => write!(f, "{name}"),
        }
    }
}

/// A `p`-dimensional estimate tagged with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub beta: Vec<f64>,
    pub method: EstimatorKind,
    #[serde(default)]
    pub diagnostics: BTreeMap<String, f64>,
}

impl CoefficientVector {
    pub fn new(beta: Vec<f64>, method: EstimatorKind) -> Self {
        CoefficientVector { beta, method, diagnostics: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn with_diagnostic(mut self, key: &str, value: f64) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

fn check_len(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(EstimatorError::DimensionMismatch { expected: x.nrows(), got: y.len() });
    }
    Ok(())
}

/// Full-sample OLS via the normal equations.
pub fn ols_full(x: &DesignMatrix, y: &[f64]) -> Result<CoefficientVector> {
    check_len(x, y)?;
    let beta = solve_normal(&x.gram(), &x.tmatvec(y)).map_err(EstimatorError::RankDeficientDesign)?;
    Ok(CoefficientVector::new(beta, EstimatorKind::FullOls))
}

fn solve_normal(a: &DenseMatrix, b: &[f64]) -> std::result::Result<Vec<f64>, MatrixError> {
    LuFactorization::new(a)?.solve(b)
}

/// Everything produced while computing a core-elements estimate.
#[derive(Debug, Clone)]
pub struct CoreFit {
    pub estimate: CoefficientVector,
    pub mask: SelectionMask,
    pub sketch: SparseColumnMatrix,
    /// `X*^T X`
    pub sketch_gram: DenseMatrix,
}

/// Core-elements fit keeping the sketch and its Gram matrix around.
pub fn core_fit(x: &DesignMatrix, y: &[f64], budget: SketchBudget) -> Result<CoreFit> {
    check_len(x, y)?;
    let (mask, sketch) = select_core_elements(x, budget);
    let gram = sparse_gram(&sketch, x).expect("sketch shape matches design");
    let rhs = sketch.tmatvec(y);
    let r = budget.per_column().min(x.nrows());
    let beta = solve_normal(&gram, &rhs).map_err(|source| EstimatorError::SingularSketchGram { r, source })?;
    Ok(CoreFit {
        estimate: CoefficientVector::new(beta, EstimatorKind::Core),
        mask,
        sketch,
        sketch_gram: gram,
    })
}

/// `(X*^T X)^{-1} X*^T y` with `X*` the core-elements sketch for `budget`.
pub fn core_estimate(x: &DesignMatrix, y: &[f64], budget: SketchBudget) -> Result<CoefficientVector> {
    core_fit(x, y, budget).map(|f| f.estimate)
}

/// `||(X*^T X)^{-1} X*^T||_F^2`, the exact estimation variance divided by
/// `sigma^2`. Evaluated as `tr(A^{-1} G A^{-T})` with `A = X*^T X` and
/// `G = X*^T X*` through `2p` triangular solves, never an explicit inverse.
pub fn core_variance_factor(x: &DesignMatrix, sketch: &SparseColumnMatrix) -> Result<f64> {
    let a = sparse_gram(sketch, x).map_err(EstimatorError::RankDeficientDesign)?;
    let r = (0..sketch.ncols()).map(|j| sketch.column(j).0.len()).max().unwrap_or(0);
    let singular = |source| EstimatorError::SingularSketchGram { r, source };
    let lu = LuFactorization::new(&a).map_err(singular)?;
    let g = sketch.self_gram();
    // C = A^{-1} G, then D = A^{-1} C^T = A^{-1} G A^{-T} because G is symmetric.
    let c = lu.solve_matrix(&g).map_err(singular)?;
    let d = lu.solve_matrix(&c.transpose()).map_err(singular)?;
    Ok(d.trace())
}

/// Unweighted OLS on a subset of rows (duplicates allowed).
pub fn row_subsample_ols(x: &DesignMatrix, y: &[f64], rows: &[usize]) -> Result<CoefficientVector> {
    row_subsample_fit(x, y, rows, None, "ROWS")
}

/// OLS on a subset of rows, each row scaled by `sqrt(weight)`.
pub fn row_subsample_wls(
    x: &DesignMatrix,
    y: &[f64],
    rows: &[usize],
    weights: &[f64],
    name: &str,
) -> Result<CoefficientVector> {
    if weights.len() != rows.len() {
        return Err(EstimatorError::DimensionMismatch { expected: rows.len(), got: weights.len() });
    }
    row_subsample_fit(x, y, rows, Some(weights), name)
}

fn row_subsample_fit(
    x: &DesignMatrix,
    y: &[f64],
    rows: &[usize],
    weights: Option<&[f64]>,
    name: &str,
) -> Result<CoefficientVector> {
    check_len(x, y)?;
    let p = x.ncols();
    if rows.len() < p {
        return Err(EstimatorError::RankDeficientSubsample(format!(
            "{} rows for {} columns",
            rows.len(),
            p
        )));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= x.nrows()) {
        return Err(EstimatorError::RankDeficientSubsample(format!("row {bad} out of range")));
    }
    let mut sub = x.select_rows(rows);
    let mut ysub: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
    if let Some(w) = weights {
        let s: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        for j in 0..p {
            sub.col_mut(j).iter_mut().zip(&s).for_each(|(v, si)| *v *= si);
        }
        ysub.iter_mut().zip(&s).for_each(|(v, si)| *v *= si);
    }
    let beta = solve_normal(&sub.gram(), &sub.tmatvec(&ysub))
        .map_err(|e| EstimatorError::RankDeficientSubsample(e.to_string()))?;
    Ok(CoefficientVector::new(beta, EstimatorKind::RowSubsample(name.to_string())))
}

/// Diagonal of the hat matrix `X (X^T X)^{-1} X^T`.
///
/// With `X^T X = L L^T`, `Q = X L^{-T}` has orthonormal columns spanning
/// `col(X)`, and `h_i` is the squared norm of row `i` of `Q`. `Q` is built
/// column by column so every pass streams contiguous memory.
pub fn leverage_scores(x: &DesignMatrix) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    let l = cholesky(&x.gram()).map_err(EstimatorError::RankDeficientDesign)?;
    let mut q = DenseMatrix::zeros(n, p);
    let mut h = vec![0.0; n];
    for j in 0..p {
        let mut col = x.col(j).to_vec();
        for k in 0..j {
            let ljk = l.get(j, k);
            if ljk != 0.0 {
                col.iter_mut().zip(q.col(k)).for_each(|(c, qk)| *c -= ljk * qk);
            }
        }
        let ljj = l.get(j, j);
        col.iter_mut().for_each(|c| *c /= ljj);
        h.iter_mut().zip(&col).for_each(|(hi, c)| *hi += c * c);
        q.col_mut(j).copy_from_slice(&col);
    }
    Ok(h)
}
