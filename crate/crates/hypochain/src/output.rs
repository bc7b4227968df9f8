//! CSV tables and JSON run summaries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::AppError;

/// Version string baked in at build time from `git describe`.
pub const VERSION: &str = env!("HYPOCHAIN_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Seventeen significant digits, so every double round-trips.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_owned()
    } else if v > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

/// A header plus rows, written as one CSV file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| (*s).to_owned()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<(), AppError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Only assertion checks decide the exit status.
    pub assertion: bool,
    pub detail: String,
}

impl Check {
    pub fn assert(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            assertion: true,
            detail: detail.into(),
        }
    }

    pub fn report(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            assertion: false,
            detail: detail.into(),
        }
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub table: Table,
    /// Additional tables written as `<subcommand>.<suffix>.csv`.
    pub extra: Vec<(String, Table)>,
    pub checks: Vec<Check>,
    pub results: Value,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.assertion)
    }
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub subcommand: &'a str,
    pub model_key: &'a str,
    pub seed: u64,
    pub paths: usize,
    pub workers: usize,
    pub version: &'a str,
    pub wall_clock_seconds: f64,
    pub passed: bool,
    pub checks: &'a [Check],
    pub warnings: &'a [String],
    pub results: &'a Value,
    pub config: Value,
    pub config_text: &'a str,
}

/// Writes `<dir>/<name>.csv`, the extra tables and `<dir>/<name>.summary.json`.
pub fn write_artifacts(dir: &Path, name: &str, report: &Report, summary: &Summary) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let csv_path = dir.join(format!("{name}.csv"));
    report.table.write(&csv_path)?;
    written.push(csv_path);
    for (suffix, table) in &report.extra {
        let p = dir.join(format!("{name}.{suffix}.csv"));
        table.write(&p)?;
        written.push(p);
    }
    let json_path = dir.join(format!("{name}.summary.json"));
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(&json_path, text)?;
    written.push(json_path);
    Ok(written)
}
