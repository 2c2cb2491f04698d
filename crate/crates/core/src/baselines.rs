//! Row-subsampling baselines: uniform, basic and shrinkage leverage sampling
//! (with replacement, inverse-probability reweighted fits), and IBOSS
//! (deterministic extreme-value selection, unweighted fit).

use std::cmp::Ordering;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{leverage_scores, row_subsample_ols, row_subsample_wls, CoefficientVector, EstimatorError};
use crate::matrix::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("requested {r} rows but only {n} are available")]
    InsufficientRows { r: usize, n: usize },
    #[error("shrinkage parameter {0} outside (0, 1]")]
    InvalidShrinkage(f64),
    #[error("subsample size must be at least 1")]
    EmptySample,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplerKind {
    Unif,
    Blev,
    Slev { lambda: f64 },
    Iboss,
}

impl SamplerKind {
    pub fn label(&self) -> String {
        match self {
            SamplerKind::Unif => "UNIF".into(),
            SamplerKind::Blev => "BLEV".into(),
            SamplerKind::Slev { lambda } => format!("SLEV({lambda})"),
            SamplerKind::Iboss => "IBOSS".into(),
        }
    }
}

/// A row subsample together with the distribution it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSample {
    pub rows: Vec<usize>,
    /// Sampling distribution over all `n` rows, for randomized methods.
    pub probabilities: Option<Vec<f64>>,
    pub method: SamplerKind,
}

impl RowSample {
    /// Fits OLS on the sample: inverse-probability weighted (`w = 1/(r pi_i)`)
    /// for randomized samplers, unweighted for IBOSS.
    pub fn fit(&self, x: &DesignMatrix, y: &[f64]) -> Result<CoefficientVector> {
        let name = self.method.label();
        let est = match &self.probabilities {
            Some(pi) => {
                let r = self.rows.len() as f64;
                let w: Vec<f64> = self.rows.iter().map(|&i| 1.0 / (r * pi[i])).collect();
                row_subsample_wls(x, y, &self.rows, &w, &name)?
            }
            None => {
                let mut est = row_subsample_ols(x, y, &self.rows)?;
                est.method = crate::estimators::EstimatorKind::RowSubsample(name);
                est
            }
        };
        Ok(est)
    }
}

fn sample_with_replacement<R: Rng + ?Sized>(probs: &[f64], r: usize, rng: &mut R) -> Vec<usize> {
    let dist = WeightedIndex::new(probs).expect("probabilities are finite, non-negative and not all zero");
    (0..r).map(|_| dist.sample(rng)).collect()
}

/// `r` uniform draws with replacement.
pub fn unif<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Result<RowSample> {
    if r == 0 || n == 0 {
        return Err(BaselineError::EmptySample);
    }
    let rows = (0..r).map(|_| rng.random_range(0..n)).collect();
    Ok(RowSample { rows, probabilities: Some(vec![1.0 / n as f64; n]), method: SamplerKind::Unif })
}

/// Leverage sampling, `pi_i = h_i / p`.
pub fn blev<R: Rng + ?Sized>(x: &DesignMatrix, r: usize, rng: &mut R) -> Result<RowSample> {
    let mut s = leverage_sample(x, r, 1.0, rng)?;
    s.method = SamplerKind::Blev;
    Ok(s)
}

/// Shrinkage leverage sampling, `pi_i = lambda h_i / p + (1 - lambda) / n`.
pub fn slev<R: Rng + ?Sized>(x: &DesignMatrix, r: usize, lambda: f64, rng: &mut R) -> Result<RowSample> {
    leverage_sample(x, r, lambda, rng)
}

/// Leverage-based sampling distribution for shrinkage `lambda`.
pub fn leverage_probabilities(x: &DesignMatrix, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(BaselineError::InvalidShrinkage(lambda));
    }
    let (n, p) = (x.nrows() as f64, x.ncols() as f64);
    let h = leverage_scores(x)?;
    Ok(h.iter().map(|hi| lambda * hi / p + (1.0 - lambda) / n).collect())
}

fn leverage_sample<R: Rng + ?Sized>(x: &DesignMatrix, r: usize, lambda: f64, rng: &mut R) -> Result<RowSample> {
    if r == 0 {
        return Err(BaselineError::EmptySample);
    }
    let probs = leverage_probabilities(x, lambda)?;
    let rows = sample_with_replacement(&probs, r, rng);
    Ok(RowSample { rows, probabilities: Some(probs), method: SamplerKind::Slev { lambda } })
}

/// Information-based optimal subset selection.
///
/// Columns are visited in order; column `j` takes its `ceil(c_j/2)` largest and
/// `floor(c_j/2)` smallest values among rows not yet chosen, where
/// `c_j = 2 floor(r / 2p)` plus one extra slot per leftover, handed out
/// round-robin from the first column. Ties go to the smaller row index.
pub fn iboss(x: &DesignMatrix, r: usize) -> Result<RowSample> {
    let (n, p) = (x.nrows(), x.ncols());
    if r > n {
        return Err(BaselineError::InsufficientRows { r, n });
    }
    if r == 0 {
        return Err(BaselineError::EmptySample);
    }
    if r < 2 * p {
        warn!("IBOSS with r = {r} < 2p = {}; some columns get no extreme rows", 2 * p);
    }
    let base = r / (2 * p);
    let leftover = r - 2 * p * base;
    let mut taken = vec![false; n];
    let mut rows = Vec::with_capacity(r);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for j in 0..p {
        let extra = leftover / p + usize::from(j < leftover % p);
        let slots = 2 * base + extra;
        let n_large = slots.div_ceil(2);
        let n_small = slots / 2;
        let col = x.col(j);
        for (want, largest) in [(n_large, true), (n_small, false)] {
            if want == 0 {
                continue;
            }
            cand.clear();
            cand.extend((0..n).filter(|&i| !taken[i]).map(|i| (col[i], i)));
            let want = want.min(cand.len());
            if want == 0 {
                continue;
            }
            let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
                let by_value = if largest { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) };
                by_value.then(a.1.cmp(&b.1))
            };
            if want < cand.len() {
                cand.select_nth_unstable_by(want - 1, order);
            }
            for &(_, i) in &cand[..want] {
                taken[i] = true;
                rows.push(i);
            }
        }
    }
    rows.sort_unstable();
    Ok(RowSample { rows, probabilities: None, method: SamplerKind::Iboss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iboss_single_column_example() {
        let x = DesignMatrix::from_rows(&[[5.0], [1.0], [9.0], [2.0], [7.0], [3.0]]).unwrap();
        let s = iboss(&x, 4).unwrap();
        // Values 9, 7 (largest) and 1, 2 (smallest).
        assert_eq!(s.rows, vec![1, 2, 3, 4]);
        assert!(s.probabilities.is_none());
        assert_eq!(iboss(&x, 4).unwrap(), s);
    }

    #[test]
    fn iboss_full_and_too_many() {
        let x = DesignMatrix::from_rows(&[[1.0, 4.0], [2.0, 3.0], [3.0, 2.0], [4.0, 1.0]]).unwrap();
        assert_eq!(iboss(&x, 4).unwrap().rows, vec![0, 1, 2, 3]);
        assert!(matches!(iboss(&x, 5), Err(BaselineError::InsufficientRows { r: 5, n: 4 })));
    }

    #[test]
    fn iboss_remainder_goes_to_first_columns() {
        // r = 5, p = 2: base 1 per side, one leftover slot for column 0.
        let x = DesignMatrix::from_rows(&[
            [10.0, 0.0],
            [-10.0, 0.0],
            [9.0, 0.1],
            [0.0, 50.0],
            [0.0, -50.0],
            [0.0, 0.0],
        ])
        .unwrap();
        let s = iboss(&x, 5).unwrap();
        assert_eq!(s.rows, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unif_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = unif(1, 7, &mut rng).unwrap();
        assert_eq!(s.rows, vec![0; 7]);
    }

    #[test]
    fn slev_lambda_one_equals_blev_distribution() {
        let x = DesignMatrix::from_rows(&[[1.0, 0.2], [0.5, 3.0], [-1.0, 1.0], [2.0, -0.5], [0.1, 0.1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = blev(&x, 10, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = slev(&x, 10, 1.0, &mut rng).unwrap();
        assert_eq!(b.probabilities, s.probabilities);
        assert_eq!(b.rows, s.rows);
        let total: f64 = b.probabilities.as_ref().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(slev(&x, 10, 0.0, &mut rng).is_err());
        assert!(slev(&x, 10, 1.5, &mut rng).is_err());
    }
}
