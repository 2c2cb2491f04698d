use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use core_elements::bench::{
    self, eps_curve, eps_grid, ingest_csv, load_run_config, run_experiment, run_on_data, write_records_csv,
    write_report, MethodSpec, ReportFormat, ResponseColumn, RunPlan,
};
use core_elements::datagen::{self, replication_rng, DesignDistribution, ExperimentConfig};
use core_elements::estimators::{core_fit, ols_full};
use core_elements::matrix::{condition_number, DesignMatrix};
use core_elements::selection::SketchBudget;
use core_elements::theory::{bound_report, BoundReport};

#[derive(Parser)]
#[command(name = "core-elements", version, about = "Core-elements least squares: fits, bounds and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthetic sweep described by a JSON or TOML config.
    Run(RunArgs),
    /// Fit one method on a CSV dataset.
    Fit(FitArgs),
    /// Bound diagnostics for a CSV dataset over a grid of budgets.
    Bounds(BoundsArgs),
    /// Write a synthetic dataset to CSV.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file (.json or .toml).
    config: PathBuf,
    /// Overrides the config's output path; `-` writes to stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV.
    data: PathBuf,
    /// Response column: zero-based index, header name or `last`.
    #[arg(long, default_value = "last")]
    response_col: ResponseColumn,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
    /// Center the design columns.
    #[arg(long)]
    center: bool,
}

impl DataArgs {
    fn load(&self) -> Result<(DesignMatrix, Vec<f64>)> {
        ingest_csv(&self.data, &self.response_col, !self.no_header, self.center)
            .with_context(|| format!("reading {}", self.data.display()))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// FullOLS, UNIF, BLEV, SLEV(l), IBOSS, CORE, MOM-CORE(k), MOM-OLS(k).
    #[arg(long, default_value = "CORE")]
    method: String,
    /// Budget: rows for row samplers, entries per column for core-elements.
    #[arg(long)]
    r: Option<usize>,
    /// Block count for MOM methods given without one.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refit on this many bootstrap resamples and report errors against
    /// full-sample OLS.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated budgets.
    #[arg(long, value_delimiter = ',')]
    r_grid: Vec<usize>,
    /// Target relative error for the threshold column.
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    /// Noise variance; defaults to the OLS residual estimate.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Instead of the r grid, emit this many points of the empirical versus
    /// theoretical relative-error curve.
    #[arg(long)]
    eps_curve: Option<usize>,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Args)]
struct GenArgs {
    /// Output CSV.
    #[arg(long, short)]
    output: PathBuf,
    /// Take the scenario from a run config instead of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    p: usize,
    /// D1 (normal), D2 (log-normal) or D3 (t3).
    #[arg(long, default_value = "D1", value_parser = parse_distribution)]
    distribution: DesignDistribution,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = datagen::DEFAULT_SNR)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    n_outliers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_distribution(s: &str) -> Result<DesignDistribution> {
    Ok(serde_json::from_value(serde_json::Value::String(s.to_string()))
        .or_else(|_| serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase())))?)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(io::stdout().lock()),
        Some(p) if p.as_os_str() == "-" => Box::new(io::stdout().lock()),
        Some(p) => Box::new(io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
    })
}

fn write_rows<T: Serialize>(rows: &[T], format: ReportFormat, out: &mut dyn Write) -> Result<()> {
    match format {
        ReportFormat::Csv => write_records_csv(rows, out)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = load_run_config(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if args.workers.is_some() {
        config.plan.workers = args.workers;
    }
    let format = args.format.or(config.format).unwrap_or(ReportFormat::Csv);
    let report = run_experiment(&config.experiment, &config.plan)?;
    let out = open_output(args.output.as_deref().or(config.output.as_deref()))?;
    write_report(&report, format, out)?;
    Ok(())
}

fn method_from_args(text: &str, k: Option<usize>) -> Result<MethodSpec> {
    let upper = text.to_ascii_uppercase().replace(['-', '_'], "");
    let needs_k = (upper == "MOMCORE" || upper == "MOMOLS") && !text.contains('(');
    let text = match (needs_k, k) {
        (true, Some(k)) => format!("{text}({k})"),
        (true, None) => bail!("method {text} needs --k"),
        _ => text.to_string(),
    };
    Ok(text.parse()?)
}

#[derive(Serialize)]
struct FitOutput {
    method: String,
    r: usize,
    beta: Vec<f64>,
    n: usize,
    p: usize,
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (x, y) = args.data.load()?;
    let method = method_from_args(&args.method, args.k)?;
    let r = args.r.unwrap_or(10 * x.ncols());
    let mut out = open_output(None)?;
    if let Some(b) = args.bootstrap {
        let mut plan = RunPlan::new(vec![method], vec![r], b);
        plan.pmse = false;
        let report = run_on_data(&x, &y, &plan, args.seed, true)?;
        write_report(&report, args.format, out)?;
        return Ok(());
    }
    let mut rng = replication_rng(args.seed, 0);
    let est = method.fit(&x, &y, r, &mut rng)?;
    let fit = FitOutput { method: method.to_string(), r, beta: est.beta, n: x.nrows(), p: x.ncols() };
    match args.format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &fit)?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            let rows: Vec<(usize, f64)> = fit.beta.iter().copied().enumerate().collect();
            writeln!(out, "coefficient,value")?;
            for (j, b) in rows {
                writeln!(out, "{j},{b}")?;
            }
        }
    }
    Ok(())
}

// Spelled out rather than flattened: the csv writer cannot serialize maps.
#[derive(Serialize)]
struct BoundRow {
    r: usize,
    lambda0: f64,
    frob_l: f64,
    variance_bound_leading: f64,
    kappa: f64,
    eps_prime_threshold: f64,
    eps_empirical: f64,
    eps_theoretical: f64,
    expansion_invalid: bool,
}

impl BoundRow {
    fn new(r: usize, b: BoundReport) -> Self {
        BoundRow {
            r,
            lambda0: b.lambda0,
            frob_l: b.frob_l,
            variance_bound_leading: b.variance_bound_leading,
            kappa: b.kappa,
            eps_prime_threshold: b.eps_prime_threshold,
            eps_empirical: b.eps_empirical,
            eps_theoretical: b.eps_theoretical,
            expansion_invalid: b.expansion_invalid,
        }
    }
}

fn cmd_bounds(args: BoundsArgs) -> Result<()> {
    let (x, y) = args.data.load()?;
    let mut out = open_output(None)?;
    if let Some(m) = args.eps_curve {
        let kappa = condition_number(&x)?;
        let grid = eps_grid(kappa, m, 0.01, 0.9);
        let points = eps_curve(&x, &y, &grid)?;
        return write_rows(&points, args.format, &mut *out);
    }
    if args.r_grid.is_empty() {
        bail!("--r-grid or --eps-curve is required");
    }
    let sigma2 = match args.sigma2 {
        Some(s) => s,
        None => {
            let (n, p) = (x.nrows(), x.ncols());
            if n == p {
                bail!("cannot estimate sigma2 with n = p; pass --sigma2");
            }
            let beta = ols_full(&x, &y)?.beta;
            let fit = x.matvec(&beta);
            y.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (n - p) as f64
        }
    };
    let mut rows = Vec::with_capacity(args.r_grid.len());
    for &r in &args.r_grid {
        let fit = core_fit(&x, &y, SketchBudget::new(r)?)?;
        let report = bound_report(&x, &y, &fit.sketch, &fit.estimate.beta, sigma2, args.eps)?;
        rows.push(BoundRow::new(r, report));
    }
    write_rows(&rows, args.format, &mut *out)
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => load_run_config(path)?.experiment,
        None => {
            let mut c = ExperimentConfig::new(args.n, args.p, args.distribution, args.alpha, args.seed);
            c.snr = args.snr;
            c.n_outliers = args.n_outliers;
            c
        }
    };
    let mut rng = replication_rng(config.seed, 0);
    let ds = datagen::generate(&config, &mut rng)?;
    bench::write_dataset_csv(ds.x.as_dense(), &ds.y, &args.output)?;
    Ok(())
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    causes: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport { error: e.to_string(), causes: e.chain().skip(1).map(|c| c.to_string()).collect() };
            let text = serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"error\":{:?}}}", e.to_string()));
            eprintln!("{text}");
            ExitCode::FAILURE
        }
    }
}
