//! Experiment runner: method roster, loss metrics, replication sweeps,
//! report and dataset I/O.

mod epscurve;
mod io;
mod runner;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError};
use crate::datagen::DatagenError;
use crate::estimators::{core_estimate, ols_full, CoefficientVector, EstimatorError};
use crate::matrix::{DenseMatrix, DesignMatrix, MatrixError};
use crate::mom::{self, MomError};
use crate::selection::SketchBudget;
use crate::theory::TheoryError;

pub use epscurve::{eps_curve, eps_grid, min_budget_for, sketch_eps_prime, EpsPoint};
pub use io::{
    emit_report, ingest_csv, load_run_config, parse_report_json, write_dataset_csv, write_records_csv, write_report, ReportFormat,
    ResponseColumn, REPORT_COLUMNS,
};
pub use runner::{
    run_experiment, run_on_data, AggregateRecord, ReplicationRecord, ReportRow, RunConfig, RunPlan, RunReport,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("reference coefficient vector is zero")]
    ZeroReference,
    #[error("test response is zero")]
    ZeroResponse,
    #[error("no estimates supplied")]
    EmptyInput,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown method '{0}'")]
    InvalidMethod(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-numeric value '{value}' at line {line}, column {column}")]
    ParseError { line: u64, column: usize, value: String },
    #[error("line {line} has {got} fields, expected {expected}")]
    DimensionMismatch { line: u64, expected: usize, got: usize },
    #[error("response column {0} not found")]
    MissingColumn(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Mom(#[from] MomError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodKind {
    FullOls,
    Unif,
    Blev,
    Slev { lambda: f64 },
    Iboss,
    Core,
    MomCore { k: usize },
    MomOls { k: usize },
}

/// A method plus an optional uniform pre-reduction of the data to
/// `factor * r` rows (without replacement) before fitting.
///
/// Text form: `FullOLS`, `UNIF`, `BLEV`, `SLEV(0.9)`, `IBOSS`, `CORE`,
/// `MOM-CORE(40)`, `MOM-OLS(40)`, optionally followed by `@factor`,
/// e.g. `CORE@5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub prereduce: Option<usize>,
}

pub const DEFAULT_SLEV_LAMBDA: f64 = 0.9;

impl MethodSpec {
    pub const fn new(kind: MethodKind) -> Self {
        MethodSpec { kind, prereduce: None }
    }

    pub fn with_prereduce(mut self, factor: usize) -> Self {
        self.prereduce = Some(factor);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::InvalidMethod(format!("{self}: {m}")));
        match self.kind {
            MethodKind::Slev { lambda } if !(lambda > 0.0 && lambda <= 1.0) => bad("lambda must lie in (0, 1]"),
            MethodKind::MomCore { k: 0 } | MethodKind::MomOls { k: 0 } => bad("k must be at least 1"),
            _ if self.prereduce == Some(0) => bad("pre-reduction factor must be at least 1"),
            _ => Ok(()),
        }
    }

    /// Fits the method with budget `r`: rows for row samplers, elements per
    /// column for core-elements (so `r p` elements in total).
    pub fn fit<R: Rng + ?Sized>(&self, x: &DesignMatrix, y: &[f64], r: usize, rng: &mut R) -> Result<CoefficientVector> {
        match self.prereduce {
            Some(f) if f.saturating_mul(r) < x.nrows() => {
                let rows = index::sample(rng, x.nrows(), f * r).into_vec();
                let xs = DesignMatrix::from_dense(x.select_rows(&rows))?;
                let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
                self.fit_kind(&xs, &ys, r, rng)
            }
            _ => self.fit_kind(x, y, r, rng),
        }
    }

    fn fit_kind<R: Rng + ?Sized>(&self, x: &DesignMatrix, y: &[f64], r: usize, rng: &mut R) -> Result<CoefficientVector> {
        let n = x.nrows();
        Ok(match self.kind {
            MethodKind::FullOls => ols_full(x, y)?,
            MethodKind::Unif => baselines::unif(n, r, rng)?.fit(x, y)?,
            MethodKind::Blev => baselines::blev(x, r, rng)?.fit(x, y)?,
            MethodKind::Slev { lambda } => baselines::slev(x, r, lambda, rng)?.fit(x, y)?,
            MethodKind::Iboss => baselines::iboss(x, r.min(n))?.fit(x, y)?,
            MethodKind::Core => {
                let budget = SketchBudget::new(r).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
                core_estimate(x, y, budget)?
            }
            MethodKind::MomCore { k } => {
                let part = mom::partition(n, k, rng)?;
                mom::mom_core_fit(x, y, r, &part, false)?.estimate
            }
            MethodKind::MomOls { k } => {
                let part = mom::partition(n, k, rng)?;
                mom::mom_ols_fit(x, y, &part)?.estimate
            }
        })
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MethodKind::FullOls => write!(f, "FullOLS")?,
            MethodKind::Unif => write!(f, "UNIF")?,
            MethodKind::Blev => write!(f, "BLEV")?,
            MethodKind::Slev { lambda } => write!(f, "SLEV({lambda})")?,
            MethodKind::Iboss => write!(f, "IBOSS")?,
            MethodKind::Core => write!(f, "CORE")?,
            MethodKind::MomCore { k } => write!(f, "MOM-CORE({k})")?,
            MethodKind::MomOls { k } => write!(f, "MOM-OLS({k})")?,
        }
        if let Some(factor) = self.prereduce {
            write!(f, "@{factor}")?;
        }
        Ok(())
    }
}

fn parse_arg<T: FromStr>(arg: Option<&str>, text: &str) -> Result<Option<T>> {
    arg.map(|a| a.trim().parse::<T>().map_err(|_| BenchError::InvalidMethod(text.to_string())))
        .transpose()
}

impl FromStr for MethodSpec {
    type Err = BenchError;

    fn from_str(text: &str) -> Result<Self> {
        let invalid = || BenchError::InvalidMethod(text.to_string());
        let (body, prereduce) = match text.trim().split_once('@') {
            Some((b, f)) => (b, Some(f.trim().parse::<usize>().map_err(|_| invalid())?)),
            None => (text.trim(), None),
        };
        let (name, arg) = match body.split_once('(') {
            Some((name, rest)) => (name, Some(rest.strip_suffix(')').ok_or_else(invalid)?)),
            None => (body, None),
        };
        let name = name.trim().to_ascii_uppercase().replace(['-', '_'], "");
        let kind = match (name.as_str(), arg) {
            ("FULLOLS" | "OLS", None) => MethodKind::FullOls,
            ("UNIF", None) => MethodKind::Unif,
            ("BLEV", None) => MethodKind::Blev,
            ("SLEV", _) => MethodKind::Slev { lambda: parse_arg(arg, text)?.unwrap_or(DEFAULT_SLEV_LAMBDA) },
            ("IBOSS", None) => MethodKind::Iboss,
            ("CORE", None) => MethodKind::Core,
            ("MOMCORE", Some(_)) => MethodKind::MomCore { k: parse_arg(arg, text)?.ok_or_else(invalid)? },
            ("MOMOLS", Some(_)) => MethodKind::MomOls { k: parse_arg(arg, text)?.ok_or_else(invalid)? },
            _ => return Err(invalid()),
        };
        let spec = MethodSpec { kind, prereduce };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = BenchError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.to_string()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Relative squared error of one estimate, `||b - ref||^2 / ||ref||^2`.
pub fn relative_error(estimate: &[f64], beta_ref: &[f64]) -> Result<f64> {
    if estimate.len() != beta_ref.len() {
        return Err(BenchError::LengthMismatch { expected: beta_ref.len(), got: estimate.len() });
    }
    let denom: f64 = beta_ref.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(BenchError::ZeroReference);
    }
    Ok(sq_dist(estimate, beta_ref) / denom)
}

/// Mean relative squared error over replications.
pub fn mse(estimates: &[Vec<f64>], beta_ref: &[f64]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut total = 0.0;
    for e in estimates {
        total += relative_error(e, beta_ref)?;
    }
    Ok(total / estimates.len() as f64)
}

/// `||X_test b - y_test||^2 / ||y_test||^2` for one replication.
pub fn pmse(x_test: &DenseMatrix, y_test: &[f64], beta_train: &[f64]) -> Result<f64> {
    if y_test.len() != x_test.nrows() {
        return Err(BenchError::LengthMismatch { expected: x_test.nrows(), got: y_test.len() });
    }
    if beta_train.len() != x_test.ncols() {
        return Err(BenchError::LengthMismatch { expected: x_test.ncols(), got: beta_train.len() });
    }
    let denom: f64 = y_test.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(BenchError::ZeroResponse);
    }
    Ok(sq_dist(&x_test.matvec(beta_train), y_test) / denom)
}
