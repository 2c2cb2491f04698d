//! Closed-form theoretical quantities for the core-elements estimator:
//! the Taylor-expansion variance bound and its radius `lambda0`, the
//! `(1 + eps)` relative-error threshold and its inverse, and the sketch-size
//! recommendations for uniform and normal entries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::{ols_full, EstimatorError};
use crate::matrix::{
    condition_number, norm2, singular_values, sparse_gram, DenseMatrix, DesignMatrix, LuFactorization, MatrixError,
    SparseColumnMatrix,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("OLS residual is zero; the relative-error threshold is undefined")]
    ZeroResidual,
    #[error("eps' * kappa^2 = {0} must be below 1")]
    InvalidEpsPrime(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// Below this `lambda0` the leading term of the variance bound is trusted.
pub const LAMBDA0_TRUST: f64 = 0.3;

/// Leading term of the variance bound and the expansion radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBound {
    /// `sigma^2 p tr((X^T X)^{-1}) (p + tr((X^T X)^{-1}) ||L||_F^2)`
    pub bound: f64,
    /// `||(X^T X)^{-1} L^T X||_2`
    pub lambda0: f64,
    /// `||L||_F` with `L = X - X*`
    pub frob_l: f64,
    /// Set when `lambda0 >= 1` and the series behind the bound diverges.
    pub expansion_invalid: bool,
}

/// All diagnostic quantities for one design, response and sketch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda0: f64,
    pub frob_l: f64,
    pub variance_bound_leading: f64,
    pub kappa: f64,
    pub eps_prime_threshold: f64,
    pub eps_empirical: f64,
    pub eps_theoretical: f64,
    pub expansion_invalid: bool,
}

/// `||(X^T X)^{-1} L^T X||_2` given `X^T X` and `X*^T X`.
///
/// Uses `L^T X = X^T X - X*^T X`, so the matrix is `I - (X^T X)^{-1} X*^T X`
/// and nothing of size `n` is touched. The norm is exact (Jacobi SVD of a
/// `p x p` matrix).
pub fn expansion_radius(gram: &DenseMatrix, sketch_gram: &DenseMatrix) -> Result<f64> {
    let lu = LuFactorization::new(gram)?;
    let mut m = lu.solve_matrix(sketch_gram)?;
    let p = m.nrows();
    for j in 0..p {
        for i in 0..p {
            let v = if i == j { 1.0 } else { 0.0 } - m.get(i, j);
            m.set(i, j, v);
        }
    }
    Ok(singular_values(&m)[0])
}

/// Inverse-Gram trace `tr((X^T X)^{-1})`.
fn trace_inverse(gram: &DenseMatrix) -> Result<f64> {
    let lu = LuFactorization::new(gram)?;
    let inv = lu.solve_matrix(&DenseMatrix::identity(gram.nrows()))?;
    Ok(inv.trace())
}

/// Leading term of the Taylor-expansion bound on `E ||beta~ - beta||^2`.
/// The `(1 + O(lambda0))` factor is not a computable constant, so `lambda0`
/// is reported alongside instead.
pub fn variance_upper_bound(x: &DesignMatrix, sketch: &SparseColumnMatrix, sigma2: f64) -> Result<VarianceBound> {
    let gram = x.gram();
    let p = x.ncols() as f64;
    let tr = trace_inverse(&gram).map_err(|e| match e {
        TheoryError::Matrix(m) => TheoryError::Estimator(EstimatorError::RankDeficientDesign(m)),
        other => other,
    })?;
    let sg = sparse_gram(sketch, x)?;
    let lambda0 = expansion_radius(&gram, &sg)?;
    // L and X* have disjoint supports inside X.
    let frob_l_sq = (x.as_dense().frobenius_norm().powi(2) - sketch.frobenius_norm().powi(2)).max(0.0);
    let bound = sigma2 * p * tr * (p + tr * frob_l_sq);
    Ok(VarianceBound { bound, lambda0, frob_l: frob_l_sq.sqrt(), expansion_invalid: lambda0 >= 1.0 })
}

fn residual_norm(x: &DesignMatrix, y: &[f64], beta: &[f64]) -> f64 {
    let fit = x.matvec(beta);
    let r: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    norm2(&r)
}

/// Quantities the relative-error formulas need, computed once per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub kappa: f64,
    pub y_norm: f64,
    pub ols_residual_norm: f64,
}

impl ResidualSummary {
    pub fn compute(x: &DesignMatrix, y: &[f64]) -> Result<Self> {
        let kappa = condition_number(x)?;
        let beta = ols_full(x, y)?;
        let res = residual_norm(x, y, &beta.beta);
        Ok(ResidualSummary { kappa, y_norm: norm2(y), ols_residual_norm: res })
    }

    /// Largest `eps'` for which `||X - X*||_2 <= eps' ||X||_2` guarantees a
    /// `(1 + eps)` relative error.
    pub fn eps_prime_threshold(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(TheoryError::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if self.ols_residual_norm == 0.0 {
            return Err(TheoryError::ZeroResidual);
        }
        let k2 = self.kappa * self.kappa;
        let ratio = self.y_norm / self.ols_residual_norm;
        Ok(1.0 / (k2 * (1.0 + (k2 + 1.0) * ratio / eps.sqrt())))
    }

    /// The `eps` guaranteed by a sketch with relative spectral error `eps'`.
    pub fn eps_theoretical(&self, eps_prime: f64) -> Result<f64> {
        if self.ols_residual_norm == 0.0 {
            return Err(TheoryError::ZeroResidual);
        }
        let k2 = self.kappa * self.kappa;
        let u = eps_prime * k2;
        if !(u < 1.0) || eps_prime < 0.0 {
            return Err(TheoryError::InvalidEpsPrime(u));
        }
        let ratio = self.y_norm / self.ols_residual_norm;
        Ok((u * (k2 + 1.0) * ratio / (1.0 - u)).powi(2))
    }
}

/// Largest admissible `eps'` for target relative error `eps`.
pub fn eps_prime_threshold(x: &DesignMatrix, y: &[f64], eps: f64) -> Result<f64> {
    ResidualSummary::compute(x, y)?.eps_prime_threshold(eps)
}

/// `(eps' k^2 (k^2 + 1) ||y|| / ((1 - eps' k^2) ||y - X b_ols||))^2`.
pub fn eps_theoretical(x: &DesignMatrix, y: &[f64], eps_prime: f64) -> Result<f64> {
    ResidualSummary::compute(x, y)?.eps_theoretical(eps_prime)
}

/// `||y - X b~||^2 / ||y - X b_ols||^2 - 1`.
///
/// Evaluated as `(||X d||^2 + 2 (y - X b_ols)^T X d) / ||y - X b_ols||^2`
/// with `d = b_ols - b~`, which is algebraically identical and avoids the
/// cancellation of subtracting two nearly equal residual norms.
pub fn eps_empirical(x: &DesignMatrix, y: &[f64], beta_tilde: &[f64], beta_ols: &[f64]) -> Result<f64> {
    let fit = x.matvec(beta_ols);
    let res: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    let denom = crate::matrix::dot(&res, &res);
    if denom == 0.0 {
        return Err(TheoryError::ZeroResidual);
    }
    let d: Vec<f64> = beta_ols.iter().zip(beta_tilde).map(|(a, b)| a - b).collect();
    let xd = x.matvec(&d);
    let num = crate::matrix::dot(&xd, &xd) + 2.0 * crate::matrix::dot(&res, &xd);
    Ok(num / denom)
}

/// A recommended per-column budget and whether it hit the `r < alpha n` cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub r: usize,
    pub capped: bool,
    /// Lower bound on `r / n` before rounding.
    pub fraction: f64,
}

fn recommend_from_fraction(alpha: f64, n: usize, fraction: f64) -> Recommendation {
    let cap = ((alpha * n as f64).ceil() as usize).saturating_sub(1);
    let r = (fraction * n as f64).ceil().max(1.0) as usize;
    if r > cap {
        Recommendation { r: cap, capped: true, fraction }
    } else {
        Recommendation { r, capped: false, fraction }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TheoryError::InvalidArgument(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Smallest `r < alpha n` with
/// `r/n >= alpha - (alpha eps' ||X||_2)^{2/3} / (2 n p)^{1/3}`
/// for entries uniform on `(-1, 1)`.
pub fn recommend_r_uniform(alpha: f64, n: usize, p: usize, eps_prime: f64, spec_norm_x: f64) -> Result<Recommendation> {
    check_alpha(alpha)?;
    let deduction = (alpha * eps_prime * spec_norm_x).powf(2.0 / 3.0) / (2.0 * n as f64 * p as f64).cbrt();
    Ok(recommend_from_fraction(alpha, n, alpha - deduction))
}

/// `G^{-1}(phi)` for the chi-squared distribution with one degree of freedom,
/// via `G^{-1}(phi) = Phi^{-1}((1 + phi) / 2)^2`.
pub fn chi2_1_quantile(phi: f64) -> Result<f64> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(TheoryError::InvalidArgument(format!("phi must lie in (0, 1), got {phi}")));
    }
    let z = Normal::standard().inverse_cdf((1.0 + phi) / 2.0);
    Ok(z * z)
}

/// Smallest `r < alpha n` with
/// `r/n >= alpha - min(alpha phi, (eps' ||X||_2)^2 / (2 G^{-1}(phi) n p))`
/// for standard normal entries.
pub fn recommend_r_normal(
    alpha: f64,
    n: usize,
    p: usize,
    eps_prime: f64,
    spec_norm_x: f64,
    phi: f64,
) -> Result<Recommendation> {
    check_alpha(alpha)?;
    let g = chi2_1_quantile(phi)?;
    let second = (eps_prime * spec_norm_x).powi(2) / (2.0 * g * n as f64 * p as f64);
    let deduction = (alpha * phi).min(second);
    Ok(recommend_from_fraction(alpha, n, alpha - deduction))
}

/// Computes every bound quantity for one sketch and estimate.
pub fn bound_report(
    x: &DesignMatrix,
    y: &[f64],
    sketch: &SparseColumnMatrix,
    beta_tilde: &[f64],
    sigma2: f64,
    eps: f64,
) -> Result<BoundReport> {
    let summary = ResidualSummary::compute(x, y)?;
    let vb = variance_upper_bound(x, sketch, sigma2)?;
    let beta_ols = ols_full(x, y)?;
    let l = crate::selection::residual_matrix(x, sketch).map_err(|e| TheoryError::InvalidArgument(e.to_string()))?;
    let eps_prime = singular_values(l.as_dense())[0] / singular_values(x.as_dense())[0];
    Ok(BoundReport {
        lambda0: vb.lambda0,
        frob_l: vb.frob_l,
        variance_bound_leading: vb.bound,
        kappa: summary.kappa,
        eps_prime_threshold: summary.eps_prime_threshold(eps)?,
        eps_empirical: eps_empirical(x, y, beta_tilde, &beta_ols.beta)?,
        eps_theoretical: summary.eps_theoretical(eps_prime).unwrap_or(f64::INFINITY),
        expansion_invalid: vb.expansion_invalid,
    })
}
