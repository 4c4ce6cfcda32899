//! CSV detail tables and the JSON summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gcalc_core::scenario::{Field, Lattice, Layout, MAX_LATTICE_DIM};
use gcalc_core::solver::BsdeSolution;

use crate::RunError;

/// Version of the summary document layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

/// Shortest decimal that parses back to the same value.
pub fn format_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
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
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    /// Every row has the header's width and every number is finite.
    pub fn validate(&self) -> Result<(), RunError> {
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.header.len() {
                return Err(RunError::Internal(format!(
                    "{}: row {r} has {} cells for {} columns",
                    self.file,
                    row.len(),
                    self.header.len()
                )));
            }
            if let Some(c) = row.iter().position(|c| matches!(c, Cell::Num(v) if !v.is_finite())) {
                return Err(RunError::Numerical(gcalc_core::Error::NonFinite {
                    what: "report",
                    step: r,
                    node: c,
                }));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| RunError::Internal(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| RunError::Internal(e.to_string()))
    }
}

/// `x1;x2`, followed by `|m1;m2` for the frozen monitored state.
fn state_label(lattice: &Lattice, layout: &Layout, k: usize, node: usize) -> String {
    let d = lattice.dim();
    let mut x = [0.0; MAX_LATTICE_DIM];
    layout.coords(lattice.space(), node, &mut x[..d]);
    let mut s = x[..d].iter().map(|v| format_num(*v)).collect::<Vec<_>>().join(";");
    if layout.monitor_step().is_some_and(|m| k >= m) && layout.monitored_coords(lattice.space(), node, &mut x[..d]) {
        s.push('|');
        s.push_str(&x[..d].iter().map(|v| format_num(*v)).collect::<Vec<_>>().join(";"));
    }
    s
}

/// One row per node and time with columns `t, state, V_1..n`.
pub fn field_table(file: &str, lattice: &Lattice, layout: &Layout, values: &Field) -> Table {
    let n = values.width();
    let mut header = vec!["t".to_string(), "state".to_string()];
    header.extend((1..=n).map(|i| format!("V_{i}")));
    let mut t = Table {
        file: file.to_string(),
        header,
        rows: Vec::new(),
    };
    for k in 0..values.layers() {
        for node in 0..layout.layer_len(k) {
            let mut row = vec![Cell::Num(lattice.time().time(k)), Cell::Text(state_label(lattice, layout, k, node))];
            row.extend(values.get(k, node).iter().map(|v| Cell::Num(*v)));
            t.push(row);
        }
    }
    t
}

/// Header `t, state, Y_1..n, Z_11..Z_dn, eta_1..eta_{n·d}, K` (or
/// `K_1..K_n` for vector terminal values).
pub fn solution_header(n: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "state".to_string()];
    h.extend((1..=n).map(|i| format!("Y_{i}")));
    for j in 1..=d {
        h.extend((1..=n).map(|i| format!("Z_{j}{i}")));
    }
    h.extend((1..=n * d).map(|o| format!("eta_{o}")));
    if n == 1 {
        h.push("K".to_string());
    } else {
        h.extend((1..=n).map(|i| format!("K_{i}")));
    }
    h
}

/// One row per node and time; `Z`, `η` and the `K` increment over
/// `[t_k, t_{k+1}]` are empty on the terminal layer.
pub fn solution_table(file: &str, lattice: &Lattice, sol: &BsdeSolution) -> Table {
    let n = sol.components();
    let d = lattice.dim();
    let layout = &sol.layout;
    let mut t = Table {
        file: file.to_string(),
        header: solution_header(n, d),
        rows: Vec::new(),
    };
    let steps = lattice.steps();
    for k in 0..=steps {
        for node in 0..layout.layer_len(k) {
            let mut row = vec![Cell::Num(lattice.time().time(k)), Cell::Text(state_label(lattice, layout, k, node))];
            row.extend(sol.y.get(k, node).iter().map(|v| Cell::Num(*v)));
            if k < steps {
                for part in [&sol.z, &sol.eta, &sol.k_increments] {
                    row.extend(part.get(k, node).iter().map(|v| Cell::Num(*v)));
                }
            } else {
                row.extend(std::iter::repeat_n(Cell::Empty, n * d * 2 + n));
            }
            t.push(row);
        }
    }
    t
}

/// Validates every table, then writes the tables and `summary.json` into
/// `dir`.
pub fn emit(dir: &Path, tables: &[Table], summary: &serde_json::Value) -> Result<(), RunError> {
    let bytes = tables
        .iter()
        .map(|t| t.validate().and_then(|_| t.to_bytes()))
        .collect::<Result<Vec<_>, _>>()?;
    let io = |e: std::io::Error| RunError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for (t, b) in tables.iter().zip(bytes) {
        fs::write(dir.join(&t.file), b).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| RunError::Internal(e.to_string()))?;
    let _ = writeln!(text);
    fs::write(dir.join("summary.json"), text).map_err(io)
}
