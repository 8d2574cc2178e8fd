//! Parallel-beam projection geometry with exact ray/pixel intersection lengths.
//!
//! The image is `n x n` unit pixels centred at the origin, stored row-major
//! with row 0 at the top (largest y). A ray at angle `theta` and detector
//! offset `s` is the line `{p : p . (cos theta, sin theta) = s}`.

use ndarray::Array1;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < cols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Coordinate triplets `(row, col, value)` in row order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(c, v)| (i, c, v)))
    }

    pub fn matvec(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter((0..self.rows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()))
    }

    pub fn matvec_transpose(&self, y: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.cols);
        for i in 0..self.rows {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        out
    }
}

/// Projection angles in radians, evenly spaced over [1 deg, 180 deg].
pub fn projection_angles(n_angles: usize) -> Vec<f64> {
    if n_angles == 1 {
        return vec![1f64.to_radians()];
    }
    (0..n_angles)
        .map(|k| (1.0 + 179.0 * k as f64 / (n_angles - 1) as f64).to_radians())
        .collect()
}

/// Detector offsets with unit spacing, centred on the rotation axis.
pub fn detector_offsets(n_detectors: usize) -> Vec<f64> {
    let half = (n_detectors as f64 - 1.0) / 2.0;
    (0..n_detectors).map(|j| j as f64 - half).collect()
}

/// Intersection lengths of one ray with the pixels of an `n x n` image.
/// Returned entries are sorted by pixel index; a ray that misses yields none.
pub fn ray_pixel_lengths(n: usize, theta: f64, offset: f64) -> Vec<(usize, f64)> {
    let half = n as f64 / 2.0;
    let (sin, cos) = theta.sin_cos();
    // p(a) = offset * (cos, sin) + a * (-sin, cos)
    let (px, py) = (offset * cos, offset * sin);
    let (dx, dy) = (-sin, cos);
    const EPS: f64 = 1e-12;

    // parameter interval inside the box [-half, half]^2
    let mut a_min = f64::NEG_INFINITY;
    let mut a_max = f64::INFINITY;
    for (p, d) in [(px, dx), (py, dy)] {
        if d.abs() < EPS {
            if p < -half || p > half {
                return Vec::new();
            }
        } else {
            let a0 = (-half - p) / d;
            let a1 = (half - p) / d;
            a_min = a_min.max(a0.min(a1));
            a_max = a_max.min(a0.max(a1));
        }
    }
    if a_max - a_min <= EPS {
        return Vec::new();
    }

    let mut params = vec![a_min, a_max];
    for (p, d) in [(px, dx), (py, dy)] {
        if d.abs() < EPS {
            continue;
        }
        for k in 0..=n {
            let a = (k as f64 - half - p) / d;
            if a > a_min && a < a_max {
                params.push(a);
            }
        }
    }
    params.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in params.windows(2) {
        let len = w[1] - w[0];
        if len <= EPS {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let x = px + mid * dx;
        let y = py + mid * dy;
        let col = ((x + half).floor() as isize).clamp(0, n as isize - 1) as usize;
        let row = ((half - y).floor() as isize).clamp(0, n as isize - 1) as usize;
        out.push((row * n + col, len));
    }
    out.sort_by_key(|e| e.0);
    // a pixel is crossed at most once by a line, but guard against split segments
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(out.len());
    for (c, v) in out {
        match merged.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => merged.push((c, v)),
        }
    }
    merged
}

/// Projection matrix with one row per (angle, detector) pair, angle-major.
pub fn parallel_beam_matrix(image_n: usize, n_angles: usize, n_detectors: usize) -> SparseMatrix {
    let angles = projection_angles(n_angles);
    let offsets = detector_offsets(n_detectors);
    let rows = angles
        .iter()
        .flat_map(|&theta| {
            offsets
                .iter()
                .map(move |&s| ray_pixel_lengths(image_n, theta, s))
        })
        .collect();
    SparseMatrix::from_rows(image_n * image_n, rows)
}
