//! Synthetic regression data: correlated normal, log-normal and t3 designs,
//! random (numerical) sparsification, SNR-calibrated responses, outlier
//! regimes and misspecification terms.
//!
//! Every generator takes the RNG explicitly. [`replication_rng`] derives an
//! independent ChaCha stream per replication so runs are reproducible no
//! matter how replications are scheduled.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, ChiSquared, Distribution, Normal, StandardNormal, StudentT, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{cholesky, DenseMatrix, DesignMatrix, MatrixError};

/// Correlation decay of the AR-type covariance `rho^{|i-j|}`.
pub const AR_RHO: f64 = 0.6;
/// Standard deviation of the perturbation added to zeroed entries.
pub const DEFAULT_PERTURB_SCALE: f64 = 1e-2;
pub const DEFAULT_SNR: f64 = 4.0;
pub const DEFAULT_MISSPEC_AMPLITUDE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatagenError {
    #[error("signal X beta has zero variance")]
    DegenerateSignal,
    #[error("misspecification {kind:?} needs p >= {needed}, got {p}")]
    DimensionTooSmall { kind: Misspec, needed: usize, p: usize },
    #[error("misspecification term is identically zero; cannot calibrate its amplitude")]
    DegenerateMisspec,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, DatagenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignDistribution {
    /// Multivariate normal `N(0, Sigma)`.
    #[serde(alias = "normal", alias = "d1")]
    D1,
    /// Multivariate log-normal `LN(0, Sigma)`.
    #[serde(alias = "lognormal", alias = "d2")]
    D2,
    /// Multivariate t with 3 degrees of freedom.
    #[serde(alias = "t3", alias = "d3")]
    D3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Misspec {
    /// `c x3 x8`
    H1,
    /// `c x3 sin(x8)`
    H2,
    /// `c x3^2`
    H3,
}

impl Misspec {
    fn min_columns(self) -> usize {
        match self {
            Misspec::H1 | Misspec::H2 => 8,
            Misspec::H3 => 3,
        }
    }

    /// Uncalibrated term for one row (columns are 1-based in the usual
    /// notation: x3 is index 2, x8 is index 7).
    fn raw(self, x: &DesignMatrix, i: usize) -> f64 {
        match self {
            Misspec::H1 => x.get(i, 2) * x.get(i, 7),
            Misspec::H2 => x.get(i, 2) * x.get(i, 7).sin(),
            Misspec::H3 => x.get(i, 2).powi(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisspecConfig {
    pub kind: Misspec,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    DEFAULT_MISSPEC_AMPLITUDE
}
fn default_snr() -> f64 {
    DEFAULT_SNR
}
fn default_alpha() -> f64 {
    1.0
}
fn default_perturb() -> f64 {
    DEFAULT_PERTURB_SCALE
}
fn default_k() -> usize {
    1
}

/// One synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub distribution: DesignDistribution,
    /// Fraction of entries kept non-zero, in `(0, 1]`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_snr")]
    pub snr: f64,
    /// Defaults to all ones.
    #[serde(default)]
    pub beta_true: Option<Vec<f64>>,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub n_outliers: usize,
    #[serde(default)]
    pub misspec: Option<MisspecConfig>,
    #[serde(default = "default_perturb")]
    pub perturb_scale: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(n: usize, p: usize, distribution: DesignDistribution, alpha: f64, seed: u64) -> Self {
        ExperimentConfig {
            n,
            p,
            distribution,
            alpha,
            snr: DEFAULT_SNR,
            beta_true: None,
            r: None,
            k: 1,
            n_outliers: 0,
            misspec: None,
            perturb_scale: DEFAULT_PERTURB_SCALE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.p == 0 || self.n <= self.p {
            return bad(format!("need n > p >= 1, got n = {}, p = {}", self.n, self.p));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.snr > 0.0) {
            return bad(format!("snr must be positive, got {}", self.snr));
        }
        if self.n_outliers >= self.n {
            return bad(format!("n_outliers = {} must be below n = {}", self.n_outliers, self.n));
        }
        if !(self.perturb_scale >= 0.0) {
            return bad(format!("perturb_scale must be non-negative, got {}", self.perturb_scale));
        }
        if let Some(b) = &self.beta_true {
            if b.len() != self.p {
                return bad(format!("beta_true has length {}, expected {}", b.len(), self.p));
            }
        }
        Ok(())
    }

    pub fn beta(&self) -> Vec<f64> {
        self.beta_true.clone().unwrap_or_else(|| vec![1.0; self.p])
    }
}

/// Independent, reproducible RNG stream for replication `rep` of `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// `Sigma_ij = rho^{|i-j|}`.
pub fn ar_covariance(p: usize, rho: f64) -> DenseMatrix {
    let mut s = DenseMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            s.set(i, j, rho.powi((i as i32 - j as i32).abs()));
        }
    }
    s
}

/// Draws `n` rows from the configured distribution, then centers columns.
pub fn gen_design<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<DesignMatrix> {
    let (n, p) = (config.n, config.p);
    let chol = cholesky(&ar_covariance(p, AR_RHO))?;
    let chi3 = ChiSquared::new(3.0).expect("valid degrees of freedom");
    let mut data = DenseMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let scale = match config.distribution {
            DesignDistribution::D3 => (3.0 / Distribution::<f64>::sample(&chi3, rng)).sqrt(),
            _ => 1.0,
        };
        for a in 0..p {
            let mut v = 0.0;
            for b in 0..=a {
                v += chol.get(a, b) * z[b];
            }
            let v = match config.distribution {
                DesignDistribution::D1 => v,
                DesignDistribution::D2 => v.exp(),
                DesignDistribution::D3 => v * scale,
            };
            data.set(i, a, v);
        }
    }
    let mut x = DesignMatrix::from_dense(data)?;
    x.center();
    Ok(x)
}

/// Replaces a uniformly random `floor((1 - alpha) n p)` entries with
/// independent `N(0, perturb_scale^2)` draws. `alpha = 1` is the identity.
/// The result is not re-centered.
pub fn sparsify<R: Rng + ?Sized>(x: &DesignMatrix, alpha: f64, perturb_scale: f64, rng: &mut R) -> Result<DesignMatrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DatagenError::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let (n, p) = (x.nrows(), x.ncols());
    let total = n * p;
    let m = ((1.0 - alpha) * total as f64 + 1e-9).floor() as usize;
    if m == 0 {
        return Ok(x.clone());
    }
    let mut data = x.as_dense().clone();
    let noise = Normal::new(0.0, perturb_scale).map_err(|e| DatagenError::InvalidConfig(e.to_string()))?;
    for flat in index::sample(rng, total, m) {
        let (i, j) = (flat % n, flat / n);
        data.set(i, j, noise.sample(rng));
    }
    Ok(DesignMatrix::from_dense(data)?)
}

pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `y = X beta + eps`, `eps ~ N(0, sigma^2)` with
/// `sigma^2 = sample_var(X beta) / snr`. Returns `(y, sigma^2)`.
pub fn gen_response<R: Rng + ?Sized>(x: &DesignMatrix, beta: &[f64], snr: f64, rng: &mut R) -> Result<(Vec<f64>, f64)> {
    if !(snr > 0.0) {
        return Err(DatagenError::InvalidConfig(format!("snr must be positive, got {snr}")));
    }
    let signal = x.matvec(beta);
    let var = sample_variance(&signal);
    if !(var > 0.0) {
        return Err(DatagenError::DegenerateSignal);
    }
    let sigma2 = var / snr;
    let sd = sigma2.sqrt();
    let y = signal.iter().map(|s| s + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((y, sigma2))
}

/// `y = X beta + h(X) + eps` with `h` scaled so that `max_i |h(x_i)| = amplitude`
/// and `sigma^2 = sample_var(X beta) / snr`.
pub fn gen_misspecified<R: Rng + ?Sized>(
    x: &DesignMatrix,
    beta: &[f64],
    snr: f64,
    misspec: MisspecConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let kind = misspec.kind;
    if x.ncols() < kind.min_columns() {
        return Err(DatagenError::DimensionTooSmall { kind, needed: kind.min_columns(), p: x.ncols() });
    }
    let h = misspec_term(x, misspec)?;
    let (mut y, sigma2) = gen_response(x, beta, snr, rng)?;
    y.iter_mut().zip(&h).for_each(|(yi, hi)| *yi += hi);
    Ok((y, sigma2))
}

/// Calibrated misspecification term for every row.
pub fn misspec_term(x: &DesignMatrix, misspec: MisspecConfig) -> Result<Vec<f64>> {
    let kind = misspec.kind;
    if x.ncols() < kind.min_columns() {
        return Err(DatagenError::DimensionTooSmall { kind, needed: kind.min_columns(), p: x.ncols() });
    }
    let raw: Vec<f64> = (0..x.nrows()).map(|i| kind.raw(x, i)).collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(DatagenError::DegenerateMisspec);
    }
    let c = misspec.amplitude / peak;
    Ok(raw.into_iter().map(|v| c * v).collect())
}

/// Outlier regime of a replaced row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutlierKind {
    /// `y = 1000 + 10 z`, `x = -10 * 1 + z`
    O1,
    /// `y = -500 + 10 z`, `x = 10 * 1 + z`
    O2,
    /// `y ~ Bernoulli(1/2)`, `x ~ U[0, 1]^p`
    O3,
    /// `x ~ N(0, I)`, `y = x^T beta + t_2`
    O4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub x: DesignMatrix,
    pub y: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub sigma2: f64,
    /// Rows holding outliers, ascending.
    pub outliers: Vec<usize>,
    /// Rows holding informative data, ascending.
    pub informative: Vec<usize>,
    /// Regime of every outlier, aligned with `outliers`.
    pub outlier_kinds: Vec<OutlierKind>,
}

impl GeneratedDataset {
    pub fn clean(x: DesignMatrix, y: Vec<f64>, beta_true: Vec<f64>, sigma2: f64) -> Self {
        let n = x.nrows();
        GeneratedDataset {
            x,
            y,
            beta_true,
            sigma2,
            outliers: Vec::new(),
            informative: (0..n).collect(),
            outlier_kinds: Vec::new(),
        }
    }
}

/// Sizes of the four outlier groups: `ceil(n_o/4)` each for O1..O3, the
/// remainder for O4.
pub fn outlier_group_sizes(n_o: usize) -> [usize; 4] {
    let q = n_o.div_ceil(4);
    let o1 = q.min(n_o);
    let o2 = q.min(n_o - o1);
    let o3 = q.min(n_o - o1 - o2);
    [o1, o2, o3, n_o - o1 - o2 - o3]
}

/// Draws one outlier row of the given regime.
pub fn outlier_row<R: Rng + ?Sized>(kind: OutlierKind, beta: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let p = beta.len();
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    match kind {
        OutlierKind::O1 => {
            let x = (0..p).map(|_| -10.0 + normal()).collect();
            (x, 1000.0 + 10.0 * normal())
        }
        OutlierKind::O2 => {
            let x = (0..p).map(|_| 10.0 + normal()).collect();
            (x, -500.0 + 10.0 * normal())
        }
        OutlierKind::O3 => {
            let unit = Uniform::new(0.0, 1.0).expect("valid range");
            let x: Vec<f64> = (0..p).map(|_| unit.sample(rng)).collect();
            let y = if Bernoulli::new(0.5).expect("valid p").sample(rng) { 1.0 } else { 0.0 };
            (x, y)
        }
        OutlierKind::O4 => {
            let t2 = StudentT::new(2.0).expect("valid degrees of freedom");
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let y = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + t2.sample(rng);
            (x, y)
        }
    }
}

/// Replaces `n_o` uniformly chosen rows with outliers (O1..O4 in the group
/// sizes of [`outlier_group_sizes`]).
pub fn inject_outliers<R: Rng + ?Sized>(
    mut x: DesignMatrix,
    mut y: Vec<f64>,
    beta: &[f64],
    sigma2: f64,
    n_o: usize,
    rng: &mut R,
) -> Result<GeneratedDataset> {
    let n = x.nrows();
    if n_o >= n {
        return Err(DatagenError::InvalidConfig(format!("n_outliers = {n_o} must be below n = {n}")));
    }
    if n_o == 0 {
        return Ok(GeneratedDataset::clean(x, y, beta.to_vec(), sigma2));
    }
    let mut positions = index::sample(rng, n, n_o).into_vec();
    positions.shuffle(rng);
    let sizes = outlier_group_sizes(n_o);
    let kinds = [OutlierKind::O1, OutlierKind::O2, OutlierKind::O3, OutlierKind::O4];
    let mut tagged: Vec<(usize, OutlierKind)> = Vec::with_capacity(n_o);
    let mut it = positions.into_iter();
    for (kind, &count) in kinds.iter().zip(&sizes) {
        for pos in it.by_ref().take(count) {
            let (row, resp) = outlier_row(*kind, beta, rng);
            x.set_row(pos, &row);
            y[pos] = resp;
            tagged.push((pos, *kind));
        }
    }
    tagged.sort_unstable_by_key(|t| t.0);
    let mut is_outlier = vec![false; n];
    tagged.iter().for_each(|t| is_outlier[t.0] = true);
    Ok(GeneratedDataset {
        x,
        y,
        beta_true: beta.to_vec(),
        sigma2,
        outliers: tagged.iter().map(|t| t.0).collect(),
        informative: (0..n).filter(|&i| !is_outlier[i]).collect(),
        outlier_kinds: tagged.iter().map(|t| t.1).collect(),
    })
}

/// Full pipeline: design, sparsification, response (possibly misspecified),
/// outliers.
pub fn generate<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<GeneratedDataset> {
    config.validate()?;
    let x = gen_design(config, rng)?;
    let x = sparsify(&x, config.alpha, config.perturb_scale, rng)?;
    let beta = config.beta();
    let (y, sigma2) = match config.misspec {
        Some(m) => gen_misspecified(&x, &beta, config.snr, m, rng)?,
        None => gen_response(&x, &beta, config.snr, rng)?,
    };
    inject_outliers(x, y, &beta, sigma2, config.n_outliers, rng)
}

/// One side of a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPart {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    /// Original row indices, ascending.
    pub rows: Vec<usize>,
}

impl SplitPart {
    pub fn design(&self) -> Result<DesignMatrix> {
        Ok(DesignMatrix::from_dense(self.x.clone())?)
    }
}

fn ratio_floor(ratio: f64, n: usize) -> usize {
    // Guard against 0.7 * 10 = 6.999... style rounding.
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Random split of the informative rows into `floor(ratio m)` training and
/// `ceil((1 - ratio) m)` test rows; outliers always join the training side.
pub fn train_test_split<R: Rng + ?Sized>(
    dataset: &GeneratedDataset,
    ratio: f64,
    rng: &mut R,
) -> Result<(SplitPart, SplitPart)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatagenError::InvalidConfig(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut informative = dataset.informative.clone();
    informative.shuffle(rng);
    let n_train = ratio_floor(ratio, informative.len());
    let mut train: Vec<usize> = informative[..n_train].to_vec();
    train.extend(&dataset.outliers);
    train.sort_unstable();
    let mut test = informative[n_train..].to_vec();
    test.sort_unstable();
    let part = |rows: Vec<usize>| SplitPart {
        x: dataset.x.select_rows(&rows),
        y: rows.iter().map(|&i| dataset.y[i]).collect(),
        rows,
    };
    Ok((part(train), part(test)))
}
