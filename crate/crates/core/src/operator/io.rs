use std::io::{BufRead, Write};

use ndarray::Array2;

use super::SparseMatrix;
use crate::error::{Error, Result};

/// Reads a dense matrix from comma-separated rows. Blank lines and lines
/// starting with `#` are skipped.
pub fn read_dense_csv(reader: impl BufRead) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("line {}: {:?}: {e}", lineno + 1, f.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(Error::Parse("empty matrix".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((m, n), flat).expect("rectangular rows"))
}

/// Writes `row,col,value` triplets with a header line.
pub fn write_triplets_csv(matrix: &SparseMatrix, mut out: impl Write) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for (i, j, v) in matrix.triplets() {
        writeln!(out, "{i},{j},{v:e}")?;
    }
    Ok(())
}
