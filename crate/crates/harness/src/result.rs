//! Tabular experiment output and its CSV form.
//!
//! A CSV starts with `# key: value` metadata lines, then a header row, then
//! one row per sweep cell in sweep order.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(s) => s.parse().ok(),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    /// Sweep coordinates, leading columns of every row.
    pub axes: Vec<String>,
    pub metrics: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Vec<(String, String)>,
}

impl ExperimentResult {
    pub fn new(name: impl Into<String>, axes: &[&str], metrics: &[&str]) -> Self {
        Self {
            name: name.into(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            metrics: metrics.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            metadata: Vec::new(),
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.axes.iter().chain(&self.metrics).map(String::as_str)
    }

    pub fn width(&self) -> usize {
        self.axes.len() + self.metrics.len()
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.width(), "{}: ragged row", self.name);
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns().position(|c| c == name)
    }

    /// Numeric value of `name` in row `row`. Panics on a missing column.
    pub fn value(&self, row: usize, name: &str) -> f64 {
        let col = self
            .column(name)
            .unwrap_or_else(|| panic!("{}: no column {name}", self.name));
        self.rows[row][col]
            .as_f64()
            .unwrap_or_else(|| panic!("{}: column {name} is not numeric", self.name))
    }

    pub fn text(&self, row: usize, name: &str) -> String {
        let col = self
            .column(name)
            .unwrap_or_else(|| panic!("{}: no column {name}", self.name));
        self.rows[row][col].to_string()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut out = Vec::new();
        for (k, v) in &self.metadata {
            out.extend_from_slice(format!("# {k}: {v}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns())?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_string))?;
        }
        w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))
    }

    /// Writes `<name>.csv` into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e| HarnessError::Io { path, source: e }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.to_csv()?).map_err(io(&path))?;
        Ok(path)
    }
}

/// An experiment's main table plus any side tables (e.g. wall-clock timings,
/// which are kept apart so the main table stays reproducible byte for byte).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub result: ExperimentResult,
    pub sidecars: Vec<ExperimentResult>,
}

impl ExperimentRun {
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::iter::once(&self.result)
            .chain(&self.sidecars)
            .map(|r| r.write_to(dir))
            .collect()
    }
}
