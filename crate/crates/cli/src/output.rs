//! Tables and their CSV / JSON encodings.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::Format;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) if x.is_nan() => "nan".into(),
            Cell::Num(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Num(x) => format!("{x:.12e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) if x.is_finite() => json!(x),
            Cell::Num(_) | Cell::Empty => Value::Null,
            Cell::Int(i) => json!(i),
            Cell::Text(s) => json!(s),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json_rows(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }
}

/// Result of one command: the main table plus free-form results and the
/// fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Output {
    pub table: Table,
    pub results: Value,
    pub config: Value,
}

pub fn default_path(out: Option<&Path>, out_dir: Option<&Path>, command: &str, format: Format) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    out_dir.unwrap_or(Path::new(".")).join(format!("{command}.{ext}"))
}

/// `run.csv` -> `run.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn metadata(command: &str, out: &Output) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": out.config,
        "results": out.results,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Writes the table (CSV plus JSON sidecar, or a single JSON document) and
/// returns the paths written.
pub fn write(command: &str, out: &Output, path: &Path, format: Format) -> Result<Vec<PathBuf>, CliError> {
    let meta = metadata(command, out);
    match format {
        Format::Csv => {
            write_file(path, &out.table.to_csv())?;
            let side = sidecar_path(path);
            write_file(&side, &(serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n"))?;
            Ok(vec![path.to_path_buf(), side])
        }
        Format::Json => {
            let mut doc = meta;
            doc["columns"] = json!(out.table.columns);
            doc["rows"] = out.table.to_json_rows();
            write_file(path, &(serde_json::to_string_pretty(&doc).expect("document serializes") + "\n"))?;
            Ok(vec![path.to_path_buf()])
        }
    }
}
