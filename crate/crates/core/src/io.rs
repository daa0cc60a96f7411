//! Long-format tables and their CSV / JSON encodings.
//!
//! CSV files start with `# key=value` metadata lines followed by a header
//! row; numbers use the shortest representation that round-trips, so equal
//! values always produce equal bytes.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::forward::ForwardSolution;
use crate::game::NashCandidate;
use crate::noise::PathEnsemble;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub scenario: String,
    pub seed: u64,
    pub horizon: f64,
    pub cells: usize,
    pub paths: usize,
    pub version: String,
}

impl Metadata {
    pub fn new(scenario: &str, seed: u64, horizon: f64, cells: usize, paths: usize) -> Self {
        Self {
            scenario: scenario.into(),
            seed,
            horizon,
            cells,
            paths,
            version: VERSION.into(),
        }
    }

    fn pairs(&self) -> [(&'static str, String); 6] {
        [
            ("scenario", self.scenario.clone()),
            ("seed", self.seed.to_string()),
            ("horizon", self.horizon.to_string()),
            ("cells", self.cells.to_string()),
            ("paths", self.paths.to_string()),
            ("version", self.version.clone()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Serialize)]
struct Document<'a> {
    metadata: &'a Metadata,
    table: &'a Table,
}

pub fn write_csv<W: Write>(mut w: W, meta: &Metadata, table: &Table) -> io::Result<()> {
    for (k, v) in meta.pairs() {
        writeln!(w, "# {k}={v}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&table.columns).map_err(io::Error::other)?;
    for row in &table.rows {
        out.write_record(row.iter().map(|v| v.to_string())).map_err(io::Error::other)?;
    }
    out.flush()
}

pub fn write_json<W: Write>(w: W, meta: &Metadata, table: &Table) -> io::Result<()> {
    serde_json::to_writer_pretty(w, &Document { metadata: meta, table }).map_err(io::Error::other)
}

/// Body of a CSV file, i.e. everything after the metadata lines.
pub fn csv_body(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest
}

/// One row per path and node: clocks, noise levels and, when given, the state.
pub fn ensemble_table(ens: &PathEnsemble, fwd: Option<&ForwardSolution>) -> Table {
    let jumps = ens.marks().jump_count();
    let mut cols: Vec<String> = ["path", "node", "t", "clock_b", "clock_h", "brownian_level"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=jumps).map(|k| format!("jump_level_{k}")));
    if fwd.is_some() {
        cols.push("x".into());
    }
    let mut t = Table { columns: cols, rows: Vec::with_capacity(ens.paths() * (ens.cells() + 1)) };
    let g = ens.grid();
    for p in 0..ens.paths() {
        for n in 0..=ens.cells() {
            let mut row = vec![
                p as f64,
                n as f64,
                g.node(n),
                ens.clock_b(p, n),
                ens.clock_h(p, n),
                ens.brownian_level(p, n),
            ];
            row.extend((1..=jumps).map(|k| ens.jump_level(p, n, k)));
            if let Some(f) = fwd {
                row.push(f.x.get(p, n));
            }
            t.push(row);
        }
    }
    t
}

/// Projected residual norms per iteration.
pub fn trace_table(cand: &NashCandidate) -> Table {
    let mut t = Table::new(&["iteration", "norm_1", "norm_2"]);
    for e in &cand.trace {
        t.push(vec![e.iteration as f64, e.norms[0], e.norms[1]]);
    }
    t
}

/// Residual cell means and constant control coefficient per player and cell.
pub fn residual_table(cand: &NashCandidate, horizon: f64) -> Table {
    let mut t = Table::new(&["player", "cell", "t", "residual", "control"]);
    for i in 0..2 {
        let cells = cand.residuals[i].len();
        for j in 0..cells {
            t.push(vec![
                (i + 1) as f64,
                j as f64,
                horizon * j as f64 / cells as f64,
                cand.residuals[i][j],
                cand.controls[i].cell_coefficients(j)[0],
            ]);
        }
    }
    t
}
