//! Tabular output shared by every command.

use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
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

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl Cell {
    /// Shortest representation that parses back to the same value.
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:?}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => json!(v),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

/// A command's result: the command line that produced it plus a table.
#[derive(Debug, Clone)]
pub struct Report {
    /// Canonical command line without the program name.
    pub config: String,
    pub calibrated_threshold: Option<f64>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    pub fn new(config: String, calibrated_threshold: Option<f64>, columns: &[&'static str]) -> Self {
        Self { config, calibrated_threshold, columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// `# gsr ...` comment line, header row, then one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# gsr {}", self.config);
        if let Some(a) = self.calibrated_threshold {
            out.push_str(&format!(" ; calibrated_threshold={a:?}"));
        }
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(Cell::csv).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self.rows.iter().map(|r| Value::Array(r.iter().map(Cell::json).collect())).collect();
        let doc = json!({
            "config": format!("gsr {}", self.config),
            "calibrated_threshold": self.calibrated_threshold,
            "columns": self.columns,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Recovers the recorded command line (without `gsr`) from a CSV or JSON report.
pub fn recorded_config(contents: &str) -> Result<String, String> {
    if let Some(first) = contents.lines().next().filter(|l| l.starts_with('#')) {
        let line = first.trim_start_matches('#').trim();
        let line = line.split(" ; ").next().unwrap_or(line);
        return line
            .strip_prefix("gsr ")
            .map(str::to_string)
            .ok_or_else(|| "header comment does not start with `gsr`".to_string());
    }
    let doc: Value = serde_json::from_str(contents).map_err(|e| format!("neither a CSV header nor JSON: {e}"))?;
    doc.get("config")
        .and_then(Value::as_str)
        .and_then(|c| c.strip_prefix("gsr "))
        .map(str::to_string)
        .ok_or_else(|| "JSON report has no `config` string".to_string())
}
