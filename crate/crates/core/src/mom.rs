//! Median-of-means core-elements: split the rows into `k` random, even blocks,
//! fit core-elements on each block with budget `floor(r / k)`, and take the
//! coordinate-wise median of the block estimates.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{core_fit, ols_full, CoefficientVector, EstimatorKind};
use crate::matrix::{symmetric_eigenvalues, DesignMatrix, SparseColumnMatrix};
use crate::selection::SketchBudget;
use crate::theory::expansion_radius;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MomError {
    #[error("block count k = {k} must satisfy 1 <= k <= n = {n}")]
    InvalidBlockCount { k: usize, n: usize },
    #[error("per-block budget floor(r / k) is zero (r = {r}, k = {k})")]
    EmptyBlockBudget { r: usize, k: usize },
    #[error("median of an empty set of estimates")]
    EmptyInput,
    #[error("estimate lengths disagree: {expected} vs {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no block produced an estimate ({0} blocks excluded)")]
    AllBlocksSingular(usize),
    #[error("sketch list does not match the partition: {0}")]
    Misaligned(String),
}

pub type Result<T> = std::result::Result<T, MomError>;

/// Assignment of row indices to `k` blocks whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    k: usize,
    assignment: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    /// Builds a partition from explicit blocks covering `0..n` exactly once.
    pub fn from_blocks(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let k = blocks.len();
        if k == 0 || k > n {
            return Err(MomError::InvalidBlockCount { k, n });
        }
        let mut assignment = vec![usize::MAX; n];
        for (b, rows) in blocks.iter_mut().enumerate() {
            rows.sort_unstable();
            for &i in rows.iter() {
                if i >= n || assignment[i] != usize::MAX {
                    return Err(MomError::Misaligned(format!("row {i} missing, repeated or out of range")));
                }
                assignment[i] = b;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(MomError::Misaligned("some rows are unassigned".into()));
        }
        Ok(BlockPartition { k, assignment, blocks })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn block_of(&self, row: usize) -> usize {
        self.assignment[row]
    }

    /// Row indices of block `b`, ascending.
    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// Number of blocks that contain at least one of `rows`.
    pub fn blocks_touched(&self, rows: &[usize]) -> usize {
        let mut hit = vec![false; self.k];
        for &i in rows {
            hit[self.assignment[i]] = true;
        }
        hit.iter().filter(|&&h| h).count()
    }
}

/// Uniformly random permutation of `0..n` cut into `k` near-equal blocks.
/// The first `n mod k` blocks get the extra row. Rows inside a block keep
/// their original order.
pub fn partition<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<BlockPartition> {
    if k == 0 || k > n {
        return Err(MomError::InvalidBlockCount { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut blocks = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        blocks.push(perm[start..start + len].to_vec());
        start += len;
    }
    BlockPartition::from_blocks(n, blocks)
}

/// Coordinate-wise median; even counts average the two central values.
pub fn coordinate_median(estimates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = estimates.first().ok_or(MomError::EmptyInput)?;
    let p = first.len();
    if let Some(bad) = estimates.iter().find(|e| e.len() != p) {
        return Err(MomError::DimensionMismatch { expected: p, got: bad.len() });
    }
    let m = estimates.len();
    let mut column = Vec::with_capacity(m);
    let median = (0..p)
        .map(|j| {
            column.clear();
            column.extend(estimates.iter().map(|e| e[j]));
            column.sort_by(f64::total_cmp);
            if m % 2 == 1 {
                column[m / 2]
            } else {
                0.5 * (column[m / 2 - 1] + column[m / 2])
            }
        })
        .collect();
    Ok(median)
}

/// Breakdown accounting for `k` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownBudget {
    /// `floor(k/2)`: this many corrupted blocks may break the median.
    pub breakdown_count: usize,
    /// Corrupted blocks that are always tolerated, `floor(k/2) - 1` (0 for k = 1).
    pub tolerated: usize,
}

pub fn breakdown_budget(k: usize) -> BreakdownBudget {
    let count = k / 2;
    BreakdownBudget { breakdown_count: count, tolerated: count.saturating_sub(1) }
}

/// Thresholds used to flag the regularity conditions on a finite sample.
/// The conditions are asymptotic, so these are judgment calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionThresholds {
    pub fisher_min: f64,
    pub fisher_max: f64,
    pub residual_ratio: f64,
}

impl Default for ConditionThresholds {
    fn default() -> Self {
        ConditionThresholds { fisher_min: 1e-6, fisher_max: 1e6, residual_ratio: 0.1 }
    }
}

/// Per-block regularity quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagnostics {
    pub block: usize,
    pub size: usize,
    /// Extreme eigenvalues of `n_l^{-1} X_l^T X_l`.
    pub fisher_min: f64,
    pub fisher_max: f64,
    /// `||L_l||_F^2 / n_l^2`
    pub residual_ratio: f64,
    /// `||(X_l^T X_l)^{-1} L_l^T X_l||_2`, infinite when `X_l^T X_l` is singular.
    pub lambda0: f64,
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomDiagnostics {
    pub blocks: Vec<BlockDiagnostics>,
    /// Blocks dropped from the median, with the reason.
    pub excluded: Vec<(usize, String)>,
}

impl MomDiagnostics {
    pub fn all_satisfied(&self) -> bool {
        self.blocks.iter().all(|b| b.h1 && b.h2 && b.h3)
    }

    pub fn max_lambda0(&self) -> f64 {
        self.blocks.iter().map(|b| b.lambda0).fold(0.0, f64::max)
    }
}

/// `k > 2 |B_O| + 1`, where `B_O` are the blocks holding an outlier.
pub fn h4_satisfied(partition: &BlockPartition, outliers: &[usize]) -> bool {
    partition.k() > 2 * partition.blocks_touched(outliers) + 1
}

fn block_design(x: &DesignMatrix, rows: &[usize]) -> std::result::Result<DesignMatrix, String> {
    DesignMatrix::from_dense(x.select_rows(rows)).map_err(|e| e.to_string())
}

fn diagnose_block(
    block: usize,
    xb: &DesignMatrix,
    sketch: &SparseColumnMatrix,
    thresholds: &ConditionThresholds,
) -> BlockDiagnostics {
    let nl = xb.nrows() as f64;
    let gram = xb.gram();
    let mut fisher = gram.clone();
    let p = gram.nrows();
    for j in 0..p {
        fisher.col_mut(j).iter_mut().for_each(|v| *v /= nl);
    }
    let ev = symmetric_eigenvalues(&fisher).unwrap_or_else(|_| vec![f64::NAN; p]);
    let (fmax, fmin) = (ev[0], ev[p - 1]);
    let frob_l_sq = (xb.as_dense().frobenius_norm().powi(2) - sketch.frobenius_norm().powi(2)).max(0.0);
    let residual_ratio = frob_l_sq / (nl * nl);
    let lambda0 = crate::matrix::sparse_gram(sketch, xb)
        .ok()
        .and_then(|sg| expansion_radius(&gram, &sg).ok())
        .unwrap_or(f64::INFINITY);
    BlockDiagnostics {
        block,
        size: xb.nrows(),
        fisher_min: fmin,
        fisher_max: fmax,
        residual_ratio,
        lambda0,
        h1: fmin > thresholds.fisher_min && fmax < thresholds.fisher_max,
        h2: residual_ratio <= thresholds.residual_ratio,
        h3: lambda0 < 1.0,
    }
}

/// Evaluates the per-block regularity quantities for given block sketches.
pub fn check_mom_conditions(
    x: &DesignMatrix,
    partition: &BlockPartition,
    sketches: &[SparseColumnMatrix],
) -> Result<MomDiagnostics> {
    check_mom_conditions_with(x, partition, sketches, &ConditionThresholds::default())
}

pub fn check_mom_conditions_with(
    x: &DesignMatrix,
    partition: &BlockPartition,
    sketches: &[SparseColumnMatrix],
    thresholds: &ConditionThresholds,
) -> Result<MomDiagnostics> {
    if sketches.len() != partition.k() || partition.n() != x.nrows() {
        return Err(MomError::Misaligned(format!(
            "{} sketches for {} blocks over {} rows (design has {})",
            sketches.len(),
            partition.k(),
            partition.n(),
            x.nrows()
        )));
    }
    let mut blocks = Vec::with_capacity(partition.k());
    let mut excluded = Vec::new();
    for (b, sketch) in sketches.iter().enumerate() {
        let rows = partition.block(b);
        if sketch.nrows() != rows.len() || sketch.ncols() != x.ncols() {
            return Err(MomError::Misaligned(format!("sketch {b} has the wrong shape")));
        }
        match block_design(x, rows) {
            Ok(xb) => blocks.push(diagnose_block(b, &xb, sketch, thresholds)),
            Err(reason) => excluded.push((b, reason)),
        }
    }
    Ok(MomDiagnostics { blocks, excluded })
}

/// Result of a median-of-means fit.
#[derive(Debug, Clone)]
pub struct MomFit {
    pub estimate: CoefficientVector,
    /// Per-block estimates in block order; `None` for excluded blocks.
    pub block_estimates: Vec<Option<Vec<f64>>>,
    pub excluded: Vec<(usize, String)>,
    pub diagnostics: Option<MomDiagnostics>,
}

impl MomFit {
    /// Corrupted blocks still tolerated once excluded blocks are counted as
    /// corrupted.
    pub fn remaining_tolerance(&self) -> usize {
        breakdown_budget(self.block_estimates.len()).tolerated.saturating_sub(self.excluded.len())
    }
}

fn aggregate(
    block_estimates: Vec<Option<Vec<f64>>>,
    excluded: Vec<(usize, String)>,
    kind: EstimatorKind,
    diagnostics: Option<MomDiagnostics>,
) -> Result<MomFit> {
    let ok: Vec<Vec<f64>> = block_estimates.iter().flatten().cloned().collect();
    if ok.is_empty() {
        return Err(MomError::AllBlocksSingular(excluded.len()));
    }
    if !excluded.is_empty() {
        warn!("{} of {} blocks excluded from the median", excluded.len(), block_estimates.len());
    }
    let beta = coordinate_median(&ok)?;
    let mut estimate = CoefficientVector::new(beta, kind);
    estimate.diagnostics.insert("excluded_blocks".into(), excluded.len() as f64);
    Ok(MomFit { estimate, block_estimates, excluded, diagnostics })
}

/// Median-of-means core-elements on a fixed partition. Diagnostics cost an
/// extra `O(n p^2)` and are only computed on request.
pub fn mom_core_fit(
    x: &DesignMatrix,
    y: &[f64],
    r: usize,
    partition: &BlockPartition,
    with_diagnostics: bool,
) -> Result<MomFit> {
    let k = partition.k();
    if partition.n() != x.nrows() || y.len() != x.nrows() {
        return Err(MomError::Misaligned("partition, design and response sizes differ".into()));
    }
    let rl = r / k;
    let budget = SketchBudget::new(rl).map_err(|_| MomError::EmptyBlockBudget { r, k })?;
    if !r.is_multiple_of(k) {
        warn!("r = {r} is not divisible by k = {k}; {} elements unused", r % k);
    }
    if rl < x.ncols() {
        warn!("per-block budget {rl} is below p = {}", x.ncols());
    }
    let thresholds = ConditionThresholds::default();
    let mut block_estimates = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    let mut diag_blocks = Vec::new();
    let mut diag_excluded = Vec::new();
    for (b, rows) in partition.blocks().iter().enumerate() {
        let xb = match block_design(x, rows) {
            Ok(xb) => xb,
            Err(reason) => {
                excluded.push((b, reason.clone()));
                diag_excluded.push((b, reason));
                block_estimates.push(None);
                continue;
            }
        };
        let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        match core_fit(&xb, &yb, budget) {
            Ok(fit) => {
                if with_diagnostics {
                    diag_blocks.push(diagnose_block(b, &xb, &fit.sketch, &thresholds));
                }
                block_estimates.push(Some(fit.estimate.beta));
            }
            Err(e) => {
                if with_diagnostics {
                    let (_, sketch) = crate::selection::select_core_elements(&xb, budget);
                    diag_blocks.push(diagnose_block(b, &xb, &sketch, &thresholds));
                }
                excluded.push((b, e.to_string()));
                block_estimates.push(None);
            }
        }
    }
    let diagnostics = with_diagnostics.then_some(MomDiagnostics { blocks: diag_blocks, excluded: diag_excluded });
    aggregate(block_estimates, excluded, EstimatorKind::MomCore, diagnostics)
}

/// Draws a random partition and runs [`mom_core_fit`] with diagnostics.
pub fn mom_core_estimate<R: Rng + ?Sized>(
    x: &DesignMatrix,
    y: &[f64],
    r: usize,
    k: usize,
    rng: &mut R,
) -> Result<(CoefficientVector, MomDiagnostics)> {
    let part = partition(x.nrows(), k, rng)?;
    let fit = mom_core_fit(x, y, r, &part, true)?;
    let diagnostics = fit.diagnostics.expect("requested diagnostics");
    Ok((fit.estimate, diagnostics))
}

/// Median of per-block full OLS estimates.
pub fn mom_ols_fit(x: &DesignMatrix, y: &[f64], partition: &BlockPartition) -> Result<MomFit> {
    if partition.n() != x.nrows() || y.len() != x.nrows() {
        return Err(MomError::Misaligned("partition, design and response sizes differ".into()));
    }
    let mut block_estimates = Vec::with_capacity(partition.k());
    let mut excluded = Vec::new();
    for (b, rows) in partition.blocks().iter().enumerate() {
        let fit = block_design(x, rows).and_then(|xb| {
            let yb: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            ols_full(&xb, &yb).map_err(|e| e.to_string())
        });
        match fit {
            Ok(est) => block_estimates.push(Some(est.beta)),
            Err(reason) => {
                excluded.push((b, reason));
                block_estimates.push(None);
            }
        }
    }
    aggregate(block_estimates, excluded, EstimatorKind::MomOls, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = partition(10, 1, &mut rng).unwrap();
        assert_eq!(one.block(0), (0..10).collect::<Vec<_>>().as_slice());
        let singles = partition(5, 5, &mut rng).unwrap();
        assert!(singles.sizes().iter().all(|&s| s == 1));
        let mut sizes = partition(10, 3, &mut rng).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(partition(3, 4, &mut rng).is_err());
        assert!(partition(3, 0, &mut rng).is_err());
    }

    #[test]
    fn median_conventions() {
        assert_eq!(coordinate_median(&[vec![1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(coordinate_median(&[vec![0.0], vec![10.0]]).unwrap(), vec![5.0]);
        assert_eq!(coordinate_median(&[vec![3.0], vec![1.0], vec![2.0]]).unwrap(), vec![2.0]);
        assert_eq!(coordinate_median(&[vec![1.0], vec![100.0], vec![2.0]]).unwrap(), vec![2.0]);
        assert_eq!(coordinate_median(&[]), Err(MomError::EmptyInput));
        assert!(matches!(
            coordinate_median(&[vec![1.0], vec![1.0, 2.0]]),
            Err(MomError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn breakdown_examples() {
        assert_eq!(breakdown_budget(1), BreakdownBudget { breakdown_count: 0, tolerated: 0 });
        assert_eq!(breakdown_budget(2).breakdown_count, 1);
        assert_eq!(breakdown_budget(40), BreakdownBudget { breakdown_count: 20, tolerated: 19 });
    }

    #[test]
    fn h4_counts_touched_blocks() {
        let part = BlockPartition::from_blocks(8, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]).unwrap();
        assert!(h4_satisfied(&part, &[0, 1]));
        assert!(!h4_satisfied(&part, &[0, 2]));
        assert!(h4_satisfied(&part, &[]));
    }

    #[test]
    fn explicit_partition_validation() {
        assert!(BlockPartition::from_blocks(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(BlockPartition::from_blocks(3, vec![vec![0, 1]]).is_err());
    }
}
