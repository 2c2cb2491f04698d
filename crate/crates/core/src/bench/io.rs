use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BenchError, Result, RunConfig, RunReport, ReportRow};
use crate::matrix::{DenseMatrix, DesignMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(BenchError::InvalidConfig(format!("unknown report format '{other}'"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "method",
    "r",
    "replication",
    "mse",
    "pmse",
    "wall_time_s",
    "kappa",
    "lambda0",
    "eps_empirical",
    "eps_theoretical",
    "failure",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_report_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for row in report.rows() {
        w.write_record([
            row.method.clone(),
            row.r.to_string(),
            row.replication.clone(),
            cell(row.mse),
            cell(row.pmse),
            cell(row.wall_time_s),
            cell(row.kappa),
            cell(row.lambda0),
            cell(row.eps_empirical),
            cell(row.eps_theoretical),
            row.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the flat report rows (replications, then `mean` and `stderr` per
/// cell). Numbers are printed in shortest round-trip form.
pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    write_report(report, format, std::io::BufWriter::new(file))
}

/// [`emit_report`] into any writer.
pub fn write_report<W: Write>(report: &RunReport, format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Csv => write_report_csv(report, &mut out)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &report.rows())?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads rows written by [`emit_report`] in JSON form.
pub fn parse_report_json(path: &Path) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes any serializable records as CSV with a header row.
pub fn write_records_csv<T: Serialize, W: Write>(records: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `x1, ..., xp, y`.
pub fn write_dataset_csv(x: &DenseMatrix, y: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (i, yi) in y.iter().enumerate() {
        let mut rec: Vec<String> = (0..x.ncols()).map(|j| x.get(i, j).to_string()).collect();
        rec.push(yi.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Which column of an input CSV holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    /// Zero-based index.
    Index(usize),
    /// Header name; needs a header row.
    Name(String),
    Last,
}

impl FromStr for ResponseColumn {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("last") {
            return Ok(ResponseColumn::Last);
        }
        Ok(match s.parse::<usize>() {
            Ok(i) => ResponseColumn::Index(i),
            Err(_) => ResponseColumn::Name(s.to_string()),
        })
    }
}

/// Reads a numeric CSV into a design and a response. Blank lines are
/// skipped. Line and column numbers in errors are 1-based.
pub fn ingest_csv(
    path: &Path,
    response: &ResponseColumn,
    has_header: bool,
    center: bool,
) -> Result<(DesignMatrix, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Option<Vec<String>> =
        if has_header { Some(reader.headers()?.iter().map(str::to_string).collect()) } else { None };
    let mut width = header.as_ref().map(Vec::len);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(BenchError::DimensionMismatch { line, expected, got: rec.len() });
        }
        let mut vals = Vec::with_capacity(expected);
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| BenchError::ParseError {
                line,
                column: j + 1,
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(BenchError::ParseError { line, column: j + 1, value: field.to_string() });
            }
            vals.push(v);
        }
        rows.push(vals);
    }
    let width = width.ok_or(BenchError::EmptyInput)?;
    let ycol = match response {
        ResponseColumn::Index(i) if *i < width => *i,
        ResponseColumn::Index(i) => return Err(BenchError::MissingColumn(i.to_string())),
        ResponseColumn::Last => width - 1,
        ResponseColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| BenchError::MissingColumn(name.clone()))?,
    };
    let n = rows.len();
    let p = width - 1;
    let mut data = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        let mut j = 0;
        for (c, &v) in row.iter().enumerate() {
            if c == ycol {
                y.push(v);
            } else {
                data[j * n + i] = v;
                j += 1;
            }
        }
    }
    let mut x = DesignMatrix::new(n, p, data)?;
    if center {
        x.center();
    }
    Ok((x, y))
}

/// Loads a run configuration; `.toml` files are read as TOML, anything else
/// as JSON.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let config: RunConfig = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("toml") => toml::from_str(&text)?,
        _ => serde_json::from_str(&text)?,
    };
    config.experiment.validate()?;
    config.plan.validate()?;
    Ok(config)
}
