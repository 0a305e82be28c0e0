use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AbilityErrorReport, ExposureReport, MetricsReport, MiReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// A report with a flat tabular view.
pub trait Report: Serialize + DeserializeOwned {
    /// Describes the columns; written as the first CSV line, prefixed by `#`.
    fn csv_comment(&self) -> &'static str;
    fn csv_columns(&self) -> &'static [&'static str];
    fn csv_rows(&self) -> Vec<Vec<String>>;
}

pub fn emit_report<R: Report>(report: &R, path: &Path, format: ReportFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, report)?;
            writeln!(w).map_err(|e| Error::io(path, e))?;
        }
        ReportFormat::Csv => write_csv(report, &mut w).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv<R: Report, W: Write>(report: &R, mut w: W) -> Result<()> {
    writeln!(w, "# {}", report.csv_comment()).map_err(|e| Error::io(Path::new("<csv>"), e))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(report.csv_columns())?;
    for row in report.csv_rows() {
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}

pub fn load_json_report<R: Report>(path: &Path) -> Result<R> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

impl Report for MetricsReport {
    fn csv_comment(&self) -> &'static str {
        "meta-set accuracy and AUC per method, test length n and fold; predictions pooled over students, averaged over repetitions; empty auc = undefined"
    }

    fn csv_columns(&self) -> &'static [&'static str] {
        &["method", "n", "fold", "accuracy", "auc"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.n.to_string(),
                    r.fold.to_string(),
                    num(r.accuracy),
                    r.auc.map_or_else(String::new, num),
                ]
            })
            .collect()
    }
}

/// Plot-ready summary of a metrics report: per method and n, mean and
/// standard deviation across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub rows: Vec<PlotRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub method: String,
    pub n: usize,
    pub folds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

impl Report for PlotData {
    fn csv_comment(&self) -> &'static str {
        "per method and n: mean and sample standard deviation across folds"
    }

    fn csv_columns(&self) -> &'static [&'static str] {
        &["method", "n", "folds", "accuracy_mean", "accuracy_std", "auc_mean", "auc_std"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.n.to_string(),
                    r.folds.to_string(),
                    num(r.accuracy_mean),
                    num(r.accuracy_std),
                    num(r.auc_mean),
                    num(r.auc_std),
                ]
            })
            .collect()
    }
}

impl Report for ExposureReport {
    fn csv_comment(&self) -> &'static str {
        "per question: students administered and exposure rate; summary in the JSON form"
    }

    fn csv_columns(&self) -> &'static [&'static str] {
        &["method", "question", "count", "rate"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.counts
            .iter()
            .zip(&self.rates)
            .enumerate()
            .map(|(j, (c, r))| vec![self.method.clone(), j.to_string(), c.to_string(), num(*r)])
            .collect()
    }
}

impl Report for MiReport {
    fn csv_comment(&self) -> &'static str {
        "fraction of each method's selections per weighted-MI decile bin (1 = lowest)"
    }

    fn csv_columns(&self) -> &'static [&'static str] {
        &["method", "bin", "fraction"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.methods
            .iter()
            .flat_map(|m| {
                m.fractions
                    .iter()
                    .enumerate()
                    .map(move |(b, f)| vec![m.method.clone(), (b + 1).to_string(), num(*f)])
            })
            .collect()
    }
}

impl Report for AbilityErrorReport {
    fn csv_comment(&self) -> &'static str {
        "mean squared error of the n-question MAP ability against the all-responses MAP ability"
    }

    fn csv_columns(&self) -> &'static [&'static str] {
        &["method", "n", "mse", "count"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![self.method.clone(), r.n.to_string(), num(r.mse), r.count.to_string()])
            .collect()
    }
}
