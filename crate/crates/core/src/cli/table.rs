use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::run::{CellStatus, RunManifest};
use crate::error::{Error, Result};

/// Placeholder for a missing cell.
pub const MISSING: &str = "—";
/// Allowed multiplicative deviation in `--check`.
pub const CHECK_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub noise_level: f64,
    pub seed: u64,
    /// `(t, RE)` per column; `None` for a missing or failed cell.
    pub entries: Vec<Option<(f64, Option<f64>)>>,
}

/// Rows are noise levels (and seeds), columns are `(t, RE)` pairs per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rules: Vec<String>,
    pub show_seed: bool,
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    pub fn from_manifest(m: &RunManifest) -> Self {
        let mut rules: Vec<String> = m.config.rules.iter().map(|r| r.label()).collect();
        rules.dedup();
        let seeds: BTreeSet<u64> = m.cells.iter().map(|c| c.seed).collect();
        let mut rows = Vec::new();
        for &noise in &m.config.noise_levels {
            for &seed in &m.config.seeds {
                let cell = m
                    .cells
                    .iter()
                    .find(|c| c.noise_level == noise && c.seed == seed && c.status == CellStatus::Ok);
                let entries = rules
                    .iter()
                    .map(|label| {
                        cell.and_then(|c| c.outcomes.iter().find(|o| &o.label == label))
                            .map(|o| (o.summary.t_stop, o.summary.re))
                    })
                    .collect();
                rows.push(TableRow {
                    noise_level: noise,
                    seed,
                    entries,
                });
            }
        }
        Self {
            rules,
            show_seed: seeds.len() > 1,
            rows,
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["delta".to_string()];
        if self.show_seed {
            h.push("seed".into());
        }
        for r in &self.rules {
            h.push(format!("{r} t"));
            h.push(format!("{r} RE"));
        }
        h
    }

    fn cells(&self, row: &TableRow) -> Vec<String> {
        let mut v = vec![format!("{:e}", row.noise_level)];
        if self.show_seed {
            v.push(row.seed.to_string());
        }
        for e in &row.entries {
            match e {
                Some((t, re)) => {
                    v.push(format!("{t:.4}"));
                    v.push(re.map_or(MISSING.to_string(), |re| format!("{re:.4e}")));
                }
                None => {
                    v.push(MISSING.into());
                    v.push(MISSING.into());
                }
            }
        }
        v
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&self.cells(row).join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.rows.iter().map(|r| self.cells(r)));
        let ncol = lines[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|j| lines.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for (i, l) in lines.iter().enumerate() {
            let padded: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}", w = *w))
                .collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (ncol - 1);
                let _ = writeln!(s, "{}", "-".repeat(total));
            }
        }
        s
    }
}

/// One row of a long-form reference file `delta,rule,t,re`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub delta: f64,
    pub rule: String,
    pub t: f64,
    pub re: f64,
}

pub fn parse_reference(text: &str) -> Result<Vec<ReferenceRow>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.starts_with("delta") {
                continue;
            }
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected delta,rule,t,re", i + 1)));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {s:?}: {e}", i + 1)))
        };
        rows.push(ReferenceRow {
            delta: num(f[0])?,
            rule: f[1].to_string(),
            t: num(f[2])?,
            re: num(f[3])?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse("reference file has no rows".into()));
    }
    Ok(rows)
}

pub fn load_reference(path: &Path) -> Result<Vec<ReferenceRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read reference {}: {e}", path.display())))?;
    parse_reference(&text)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub delta: f64,
    pub rule: String,
    pub seed: Option<u64>,
    pub quantity: &'static str,
    pub reference: f64,
    pub found: Option<f64>,
    pub pass: bool,
}

impl CheckLine {
    pub fn render(&self) -> String {
        let found = self.found.map_or(MISSING.to_string(), |v| format!("{v:.4e}"));
        let seed = self.seed.map_or(String::new(), |s| format!(" seed={s}"));
        format!(
            "{} delta={:e}{seed} {} {}: found {found}, reference {:.4e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.delta,
            self.rule,
            self.quantity,
            self.reference
        )
    }
}

fn within_factor(found: f64, reference: f64, factor: f64) -> bool {
    found > 0.0 && reference > 0.0 && found <= reference * factor && found >= reference / factor
}

fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Compares every reference entry whose noise level is on the table's ladder
/// against each seed's `(t, RE)` within a factor of [`CHECK_FACTOR`].
pub fn check_table(table: &ResultTable, reference: &[ReferenceRow]) -> Vec<CheckLine> {
    let mut out = Vec::new();
    for r in reference {
        let rows: Vec<&TableRow> = table
            .rows
            .iter()
            .filter(|row| same_level(row.noise_level, r.delta))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let col = table.rules.iter().position(|l| *l == r.rule);
        for row in rows {
            let entry = col.and_then(|j| row.entries[j]);
            let seed = table.show_seed.then_some(row.seed);
            let t = entry.map(|e| e.0);
            let re = entry.and_then(|e| e.1);
            for (quantity, reference, found) in [("t", r.t, t), ("RE", r.re, re)] {
                out.push(CheckLine {
                    delta: r.delta,
                    rule: r.rule.clone(),
                    seed,
                    quantity,
                    reference,
                    found,
                    pass: found.is_some_and(|f| within_factor(f, reference, CHECK_FACTOR)),
                });
            }
        }
    }
    out
}
