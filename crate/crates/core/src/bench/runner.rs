use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pmse, relative_error, BenchError, MethodSpec, ReportFormat, Result};
use crate::datagen::{generate, replication_rng, train_test_split, ExperimentConfig, GeneratedDataset, SplitPart};
use crate::estimators::{core_fit, ols_full};
use crate::matrix::{condition_number, DesignMatrix};
use crate::selection::SketchBudget;
use crate::theory::{eps_empirical, expansion_radius, ResidualSummary};

fn default_true() -> bool {
    true
}
fn default_split() -> f64 {
    0.7
}
fn default_replications() -> usize {
    1
}

/// What to run on every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub methods: Vec<MethodSpec>,
    /// Row budgets; core-elements keeps this many entries per column.
    pub r_grid: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Record wall time of every fit. Timings are not reproducible, so turn
    /// this off when byte-identical output is needed.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Also fit on a train split and record the test-set prediction error.
    #[serde(default = "default_true")]
    pub pmse: bool,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    /// Record condition number, expansion radius and relative-error terms.
    #[serde(default)]
    pub diagnostics: bool,
}

impl RunPlan {
    pub fn new(methods: Vec<MethodSpec>, r_grid: Vec<usize>, replications: usize) -> Self {
        RunPlan {
            methods,
            r_grid,
            replications,
            workers: None,
            timing: true,
            pmse: true,
            split_ratio: 0.7,
            diagnostics: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.methods.is_empty() {
            return bad("method list is empty");
        }
        if self.r_grid.is_empty() || self.r_grid.contains(&0) {
            return bad("r grid must be non-empty with positive entries");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)");
        }
        self.methods.iter().try_for_each(MethodSpec::validate)
    }
}

/// Config file contents: scenario, plan and output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    #[serde(flatten)]
    pub plan: RunPlan,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<ReportFormat>,
}

/// One fit in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub method: String,
    pub r: usize,
    pub replication: usize,
    pub estimate: Option<Vec<f64>>,
    pub mse: Option<f64>,
    pub pmse: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda0: Option<f64>,
    pub eps_empirical: Option<f64>,
    pub eps_theoretical: Option<f64>,
    pub failure: Option<String>,
}

/// Mean and standard error of one metric over the successful replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    pub stderr: Option<f64>,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return MeanStd { mean: None, stderr: None };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let stderr = (m > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        });
        MeanStd { mean: Some(mean), stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub method: String,
    pub r: usize,
    pub mse: MeanStd,
    pub pmse: MeanStd,
    pub wall_time_s: MeanStd,
    pub kappa: MeanStd,
    pub lambda0: MeanStd,
    pub eps_empirical: MeanStd,
    pub eps_theoretical: MeanStd,
    pub succeeded: usize,
    pub skipped: usize,
}

/// Flat row shared by the CSV and JSON outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub r: usize,
    pub replication: String,
    pub mse: Option<f64>,
    pub pmse: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub kappa: Option<f64>,
    pub lambda0: Option<f64>,
    pub eps_empirical: Option<f64>,
    pub eps_theoretical: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub replications: usize,
    /// Ordered by method (plan order), then r, then replication.
    pub records: Vec<ReplicationRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

impl RunReport {
    fn assemble(replications: usize, plan: &RunPlan, mut records: Vec<ReplicationRecord>) -> Self {
        let labels: Vec<String> = plan.methods.iter().map(|m| m.to_string()).collect();
        let method_pos = |name: &str| labels.iter().position(|l| l == name).unwrap_or(usize::MAX);
        records.sort_by(|a, b| {
            (method_pos(&a.method), a.r, a.replication).cmp(&(method_pos(&b.method), b.r, b.replication))
        });
        let mut aggregates = Vec::new();
        for label in &labels {
            for &r in &plan.r_grid {
                let cell: Vec<&ReplicationRecord> =
                    records.iter().filter(|rec| &rec.method == label && rec.r == r).collect();
                if cell.is_empty() || aggregates.iter().any(|a: &AggregateRecord| &a.method == label && a.r == r) {
                    continue;
                }
                let ok: Vec<&&ReplicationRecord> = cell.iter().filter(|rec| rec.failure.is_none()).collect();
                let stat = |f: fn(&ReplicationRecord) -> Option<f64>| {
                    MeanStd::of(&ok.iter().filter_map(|rec| f(rec)).filter(|v| v.is_finite()).collect::<Vec<_>>())
                };
                aggregates.push(AggregateRecord {
                    method: label.clone(),
                    r,
                    mse: stat(|r| r.mse),
                    pmse: stat(|r| r.pmse),
                    wall_time_s: stat(|r| r.wall_time_s),
                    kappa: stat(|r| r.kappa),
                    lambda0: stat(|r| r.lambda0),
                    eps_empirical: stat(|r| r.eps_empirical),
                    eps_theoretical: stat(|r| r.eps_theoretical),
                    succeeded: ok.len(),
                    skipped: cell.len() - ok.len(),
                });
            }
        }
        RunReport { replications, records, aggregates }
    }

    pub fn aggregate(&self, method: &str, r: usize) -> Option<&AggregateRecord> {
        self.aggregates.iter().find(|a| a.method == method && a.r == r)
    }

    pub fn cell(&self, method: &str, r: usize) -> impl Iterator<Item = &ReplicationRecord> {
        let method = method.to_string();
        self.records.iter().filter(move |rec| rec.method == method && rec.r == r)
    }

    /// Replication rows followed, per cell, by `mean` and `stderr` rows.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut out: Vec<ReportRow> = self
            .records
            .iter()
            .map(|rec| ReportRow {
                method: rec.method.clone(),
                r: rec.r,
                replication: rec.replication.to_string(),
                mse: rec.mse,
                pmse: rec.pmse,
                wall_time_s: rec.wall_time_s,
                kappa: rec.kappa,
                lambda0: rec.lambda0,
                eps_empirical: rec.eps_empirical,
                eps_theoretical: rec.eps_theoretical,
                failure: rec.failure.clone(),
            })
            .collect();
        for a in &self.aggregates {
            let skipped = (a.skipped > 0).then(|| format!("skipped {} failed replications", a.skipped));
            for (tag, pick) in [("mean", true), ("stderr", false)] {
                let v = |m: MeanStd| if pick { m.mean } else { m.stderr };
                out.push(ReportRow {
                    method: a.method.clone(),
                    r: a.r,
                    replication: tag.to_string(),
                    mse: v(a.mse),
                    pmse: v(a.pmse),
                    wall_time_s: v(a.wall_time_s),
                    kappa: v(a.kappa),
                    lambda0: v(a.lambda0),
                    eps_empirical: v(a.eps_empirical),
                    eps_theoretical: v(a.eps_theoretical),
                    failure: skipped.clone(),
                });
            }
        }
        out
    }
}

/// Per-dataset quantities needed for the diagnostics columns.
struct DiagnosticContext {
    kappa: Option<f64>,
    summary: Option<ResidualSummary>,
    beta_ols: Option<Vec<f64>>,
    gram: crate::matrix::DenseMatrix,
}

impl DiagnosticContext {
    fn new(x: &DesignMatrix, y: &[f64]) -> Self {
        DiagnosticContext {
            kappa: condition_number(x).ok(),
            summary: ResidualSummary::compute(x, y).ok(),
            beta_ols: ols_full(x, y).ok().map(|b| b.beta),
            gram: x.gram(),
        }
    }

    fn fill_core(&self, rec: &mut ReplicationRecord, x: &DesignMatrix, y: &[f64], r: usize) {
        let Ok(budget) = SketchBudget::new(r) else { return };
        let Ok(fit) = core_fit(x, y, budget) else { return };
        rec.lambda0 = expansion_radius(&self.gram, &fit.sketch_gram).ok();
        if let Some(b_ols) = &self.beta_ols {
            rec.eps_empirical = eps_empirical(x, y, &fit.estimate.beta, b_ols).ok();
        }
        if let Some(s) = &self.summary {
            rec.eps_theoretical = super::sketch_eps_prime(x, &fit.sketch)
                .ok()
                .and_then(|ep| s.eps_theoretical(ep).ok());
        }
    }
}

fn blank_record(method: &MethodSpec, r: usize, replication: usize) -> ReplicationRecord {
    ReplicationRecord {
        method: method.to_string(),
        r,
        replication,
        estimate: None,
        mse: None,
        pmse: None,
        wall_time_s: None,
        kappa: None,
        lambda0: None,
        eps_empirical: None,
        eps_theoretical: None,
        failure: None,
    }
}

fn failed_records(plan: &RunPlan, replication: usize, reason: &str) -> Vec<ReplicationRecord> {
    let mut out = Vec::new();
    for m in &plan.methods {
        for &r in &plan.r_grid {
            let mut rec = blank_record(m, r, replication);
            rec.failure = Some(reason.to_string());
            out.push(rec);
        }
    }
    out
}

/// Fits every (method, r) cell on one dataset. The MSE fit uses the whole
/// dataset, the PMSE fit uses the train split.
fn evaluate(
    ds: &GeneratedDataset,
    beta_ref: &[f64],
    plan: &RunPlan,
    replication: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ReplicationRecord> {
    let split: Option<std::result::Result<(SplitPart, DesignMatrix, SplitPart), String>> = plan.pmse.then(|| {
        let (train, test) = train_test_split(ds, plan.split_ratio, rng).map_err(|e| e.to_string())?;
        let xt = train.design().map_err(|e| e.to_string())?;
        Ok((train, xt, test))
    });
    let diag = plan.diagnostics.then(|| DiagnosticContext::new(&ds.x, &ds.y));
    let mut out = Vec::with_capacity(plan.methods.len() * plan.r_grid.len());
    for method in &plan.methods {
        for &r in &plan.r_grid {
            let mut rec = blank_record(method, r, replication);
            let mut fit_rng = ChaCha8Rng::from_rng(&mut *rng);
            let mut train_rng = ChaCha8Rng::from_rng(&mut *rng);
            let start = Instant::now();
            let fit = method.fit(&ds.x, &ds.y, r, &mut fit_rng);
            let elapsed = start.elapsed().as_secs_f64();
            match fit.and_then(|est| relative_error(&est.beta, beta_ref).map(|e| (est, e))) {
                Ok((est, err)) => {
                    rec.mse = Some(err);
                    rec.estimate = Some(est.beta);
                    if plan.timing {
                        rec.wall_time_s = Some(elapsed);
                    }
                }
                Err(e) => rec.failure = Some(e.to_string()),
            }
            match &split {
                Some(Ok((train, xt, test))) if rec.failure.is_none() => {
                    let res = method
                        .fit(xt, &train.y, r, &mut train_rng)
                        .and_then(|est| pmse(&test.x, &test.y, &est.beta));
                    match res {
                        Ok(v) => rec.pmse = Some(v),
                        Err(e) => rec.failure = Some(format!("train fit: {e}")),
                    }
                }
                Some(Err(e)) if rec.failure.is_none() => rec.failure = Some(format!("split: {e}")),
                _ => {}
            }
            if let Some(d) = &diag {
                rec.kappa = d.kappa;
                if matches!(method.kind, super::MethodKind::Core) && method.prereduce.is_none() {
                    d.fill_core(&mut rec, &ds.x, &ds.y, r);
                }
            }
            out.push(rec);
        }
    }
    out
}

fn with_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| BenchError::ThreadPool(e.to_string()))?;
    Ok(pool.install(job))
}

fn warm_up(ds: &GeneratedDataset, plan: &RunPlan) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for m in &plan.methods {
        let _ = m.fit(&ds.x, &ds.y, plan.r_grid[0], &mut rng);
    }
}

/// Synthetic sweep: every replication draws a fresh dataset from its own RNG
/// stream, so results do not depend on scheduling or worker count.
pub fn run_experiment(config: &ExperimentConfig, plan: &RunPlan) -> Result<RunReport> {
    config.validate()?;
    plan.validate()?;
    let beta = config.beta();
    if plan.timing {
        let mut rng = replication_rng(config.seed, u64::MAX);
        if let Ok(ds) = generate(config, &mut rng) {
            warm_up(&ds, plan);
        }
    }
    info!(
        "running {} replications of {} methods over {} budgets",
        plan.replications,
        plan.methods.len(),
        plan.r_grid.len()
    );
    let records = with_pool(plan.workers, || {
        (0..plan.replications)
            .into_par_iter()
            .flat_map_iter(|rep| {
                let mut rng = replication_rng(config.seed, rep as u64);
                match generate(config, &mut rng) {
                    Ok(ds) => evaluate(&ds, &beta, plan, rep, &mut rng),
                    Err(e) => {
                        warn!("replication {rep}: data generation failed: {e}");
                        failed_records(plan, rep, &format!("generation: {e}"))
                    }
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(RunReport::assemble(plan.replications, plan, records))
}

/// Sweep on fixed data with full-sample OLS as the reference. With
/// `bootstrap`, every replication refits on rows resampled with replacement;
/// otherwise replications differ only in the methods' own randomness.
pub fn run_on_data(x: &DesignMatrix, y: &[f64], plan: &RunPlan, seed: u64, bootstrap: bool) -> Result<RunReport> {
    plan.validate()?;
    let beta_ref = ols_full(x, y)?.beta;
    let n = x.nrows();
    if plan.timing {
        warm_up(&GeneratedDataset::clean(x.clone(), y.to_vec(), beta_ref.clone(), f64::NAN), plan);
    }
    let records = with_pool(plan.workers, || {
        (0..plan.replications)
            .into_par_iter()
            .flat_map_iter(|rep| {
                let mut rng = replication_rng(seed, rep as u64);
                let ds = if bootstrap {
                    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    let ys = rows.iter().map(|&i| y[i]).collect();
                    match DesignMatrix::from_dense(x.select_rows(&rows)) {
                        Ok(xs) => GeneratedDataset::clean(xs, ys, beta_ref.clone(), f64::NAN),
                        Err(e) => return failed_records(plan, rep, &format!("bootstrap: {e}")),
                    }
                } else {
                    GeneratedDataset::clean(x.clone(), y.to_vec(), beta_ref.clone(), f64::NAN)
                };
                evaluate(&ds, &beta_ref, plan, rep, &mut rng)
            })
            .collect::<Vec<_>>()
    })?;
    Ok(RunReport::assemble(plan.replications, plan, records))
}
