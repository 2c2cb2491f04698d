use serde::{Deserialize, Serialize};

use super::Result;
use crate::estimators::{core_estimate, ols_full};
use crate::matrix::{singular_values, DesignMatrix, SparseColumnMatrix};
use crate::selection::{residual_matrix, select_core_elements, SketchBudget};
use crate::theory::{eps_empirical, ResidualSummary};

/// One point of the empirical versus theoretical relative-error curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsPoint {
    pub eps_prime: f64,
    /// Smallest budget found whose sketch satisfies `||X - X*||_2 <= eps' ||X||_2`.
    pub r: usize,
    /// `||X - X*||_2 / ||X||_2` at that budget.
    pub achieved_eps_prime: f64,
    pub eps_empirical: f64,
    /// `None` when `eps' kappa^2 >= 1`.
    pub eps_theoretical: Option<f64>,
}

/// `||X - X*||_2 / ||X||_2`.
pub fn sketch_eps_prime(x: &DesignMatrix, sketch: &SparseColumnMatrix) -> Result<f64> {
    let l = residual_matrix(x, sketch).map_err(|e| super::BenchError::InvalidConfig(e.to_string()))?;
    Ok(singular_values(l.as_dense())[0] / singular_values(x.as_dense())[0])
}

fn achieved(x: &DesignMatrix, r: usize) -> Result<f64> {
    let budget = SketchBudget::new(r).map_err(|e| super::BenchError::InvalidConfig(e.to_string()))?;
    let (_, sketch) = select_core_elements(x, budget);
    sketch_eps_prime(x, &sketch)
}

/// Binary search for the smallest `r` whose sketch meets `eps'`. The ratio is
/// close to monotone in `r` but not exactly, so the returned budget is
/// guaranteed to satisfy the bound, not to be globally minimal.
pub fn min_budget_for(x: &DesignMatrix, eps_prime: f64) -> Result<(usize, f64)> {
    let (mut lo, mut hi) = (0usize, x.nrows());
    let mut hi_val = 0.0;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let v = achieved(x, mid)?;
        if v <= eps_prime {
            hi = mid;
            hi_val = v;
        } else {
            lo = mid;
        }
    }
    Ok((hi, hi_val))
}

/// `m` log-spaced values between `lo / kappa^2` and `hi / kappa^2`.
pub fn eps_grid(kappa: f64, m: usize, lo: f64, hi: f64) -> Vec<f64> {
    let k2 = kappa * kappa;
    if m == 1 {
        return vec![lo / k2];
    }
    (0..m)
        .map(|i| {
            let t = i as f64 / (m - 1) as f64;
            (lo.ln() + t * (hi.ln() - lo.ln())).exp() / k2
        })
        .collect()
}

/// For each `eps'`, picks the smallest sketch meeting it and reports the
/// empirical and theoretical relative errors.
pub fn eps_curve(x: &DesignMatrix, y: &[f64], grid: &[f64]) -> Result<Vec<EpsPoint>> {
    let summary = ResidualSummary::compute(x, y)?;
    let beta_ols = ols_full(x, y)?.beta;
    let mut out = Vec::with_capacity(grid.len());
    for &eps_prime in grid {
        let (r, achieved_eps_prime) = min_budget_for(x, eps_prime)?;
        let budget = SketchBudget::new(r).map_err(|e| super::BenchError::InvalidConfig(e.to_string()))?;
        let est = core_estimate(x, y, budget)?;
        out.push(EpsPoint {
            eps_prime,
            r,
            achieved_eps_prime,
            eps_empirical: eps_empirical(x, y, &est.beta, &beta_ols)?,
            eps_theoretical: summary.eps_theoretical(eps_prime).ok(),
        });
    }
    Ok(out)
}
