//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

pub fn random_vector(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| r.random_range(lo..hi))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Euclidean projection onto `{x : sum x = 1, x >= eps}` by sorting.
pub fn project_simplex(v: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len();
    let mass = 1.0 - eps * n as f64;
    let u: Vec<f64> = v.iter().map(|x| x - eps).collect();
    let mut s = u.clone();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, sk) in s.iter().enumerate() {
        cum += sk;
        let t = (cum - mass) / (k + 1) as f64;
        if sk - t > 0.0 {
            theta = t;
        }
    }
    u.iter().map(|x| (x - theta).max(0.0) + eps).collect()
}

/// `argmin sum x ln x - <xi, x>` over the unit-weight simplex by projected
/// gradient on `{x >= eps}`; `eps` must lie below the minimizer's entries.
pub fn entropy_argmin_projected_gradient(xi: &[f64], eps: f64, iters: usize) -> Vec<f64> {
    let n = xi.len();
    let step = eps; // 1 / L with L = 1 / eps on the feasible set
    let mut x = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let g: Vec<f64> = x
            .iter()
            .zip(xi)
            .map(|(xk, s)| xk - step * (xk.ln() + 1.0 - s))
            .collect();
        x = project_simplex(&g, eps);
    }
    x
}

/// Difference pairs `(i, j)` of the anisotropic TV on a `rows x cols` grid.
pub fn tv_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            e.push((r * cols + c, r * cols + c + 1));
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            e.push((r * cols + c, (r + 1) * cols + c));
        }
    }
    e
}

pub fn tv_objective(z: &[f64], v: &[f64], beta: f64, edges: &[(usize, usize)]) -> f64 {
    let fit: f64 = z.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * beta);
    fit + edges.iter().map(|(i, j)| (z[*j] - z[*i]).abs()).sum::<f64>()
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Exact `argmin (1/(2 beta)) ||z - v||^2 + sum_edges |z_j - z_i|` by
/// enumerating every sign pattern of the differences. On the face with
/// signs `s` (zero on a set `Z`), the minimizer is `v - beta D^T s` averaged
/// over the components joined by `Z`; the optimum is the best candidate.
pub fn tv_prox_brute_force(v: &[f64], beta: f64, edges: &[(usize, usize)]) -> Vec<f64> {
    let n = v.len();
    let m = edges.len();
    let mut best = (f64::INFINITY, v.to_vec());
    let mut signs = vec![0i8; m];
    let total = 3usize.pow(m as u32);
    for code in 0..total {
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        let mut w = v.to_vec();
        let mut parent: Vec<usize> = (0..n).collect();
        for ((i, j), s) in edges.iter().zip(&signs) {
            if *s == 0 {
                let (a, b) = (find(&mut parent, *i), find(&mut parent, *j));
                parent[a] = b;
            } else {
                // D^T s adds s at j and subtracts it at i
                w[*j] -= beta * *s as f64;
                w[*i] += beta * *s as f64;
            }
        }
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for (k, wk) in w.iter().enumerate() {
            let r = find(&mut parent, k);
            sum[r] += wk;
            count[r] += 1;
        }
        let z: Vec<f64> = (0..n)
            .map(|k| {
                let r = find(&mut parent, k);
                sum[r] / count[r] as f64
            })
            .collect();
        let f = tv_objective(&z, v, beta, edges);
        if f < best.0 {
            best = (f, z);
        }
    }
    best.1
}

/// Closed form of the Showalter flow `x' = A^T (y - A x)`, `x(0) = 0`:
/// `x(t) = sum (1 - exp(-s^2 t)) / s <u, y> v`.
pub fn showalter_closed_form(a: &Array2<f64>, y: &Array1<f64>, t: f64) -> Array1<f64> {
    let (m, n) = a.dim();
    let mat = DMatrix::from_fn(m, n, |i, j| a[[i, j]]);
    let svd = mat.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut x = Array1::zeros(n);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s <= 1e-14 {
            continue;
        }
        let uy: f64 = (0..m).map(|i| u[(i, k)] * y[i]).sum();
        let coef = (1.0 - (-s * s * t).exp()) / s * uy;
        for j in 0..n {
            x[j] += coef * vt[(k, j)];
        }
    }
    x
}

/// Non-increase of a sequence up to `tol`; returns the largest increase.
pub fn largest_increase(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}
