//! Anisotropic total variation on images and its proximal map.
//!
//! TV(z) = sum |z[r][c+1] - z[r][c]| + sum |z[r+1][c] - z[r][c]| with no
//! differences taken across the last column / last row.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Upper bound on `||D||^2` for the 2D forward-difference operator.
pub const DIFF_NORM_SQ_BOUND: f64 = 8.0;

/// Number of difference terms for a `rows x cols` image.
pub fn n_differences(rows: usize, cols: usize) -> usize {
    rows * cols.saturating_sub(1) + rows.saturating_sub(1) * cols
}

/// `D z`, horizontal differences first, then vertical ones.
pub fn gradient(z: &Array2<f64>, out: &mut [f64]) {
    let (rows, cols) = z.dim();
    let zs = z.as_slice().expect("standard layout");
    let nh = rows * cols.saturating_sub(1);
    let (h, vert) = out.split_at_mut(nh);
    if cols > 1 {
        for (zr, hr) in zs.chunks_exact(cols).zip(h.chunks_exact_mut(cols - 1)) {
            for (o, w) in hr.iter_mut().zip(zr.windows(2)) {
                *o = w[1] - w[0];
            }
        }
    }
    for (k, o) in vert.iter_mut().enumerate() {
        *o = zs[k + cols] - zs[k];
    }
}

/// `D^T p`.
pub fn gradient_transpose(p: &[f64], rows: usize, cols: usize, out: &mut Array2<f64>) {
    let os = out.as_slice_mut().expect("standard layout");
    os.fill(0.0);
    let nh = rows * cols.saturating_sub(1);
    let (h, vert) = p.split_at(nh);
    if cols > 1 {
        for (orow, hr) in os.chunks_exact_mut(cols).zip(h.chunks_exact(cols - 1)) {
            for (c, pk) in hr.iter().enumerate() {
                orow[c + 1] += pk;
                orow[c] -= pk;
            }
        }
    }
    for (k, pk) in vert.iter().enumerate() {
        os[k + cols] += pk;
        os[k] -= pk;
    }
}

pub fn tv_value(z: &Array2<f64>) -> f64 {
    let (rows, cols) = z.dim();
    let mut buf = vec![0.0; n_differences(rows, cols)];
    gradient(z, &mut buf);
    buf.iter().map(|d| d.abs()).sum()
}

#[derive(Debug, Clone)]
pub struct TvProx {
    pub image: Array2<f64>,
    /// Dual field `p` with `|p| <= 1`; reusable as a warm start.
    pub dual: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
}

/// Iterations between primal-dual gap evaluations.
const GAP_EVERY: usize = 10;

/// Workspace shared by the inner solvers.
struct Work<'a> {
    v: &'a Array2<f64>,
    beta: f64,
    rows: usize,
    cols: usize,
    dtp: Array2<f64>,
    z_hat: Array2<f64>,
    diff: Vec<f64>,
}

impl<'a> Work<'a> {
    fn new(v: &'a Array2<f64>, beta: f64) -> Self {
        let (rows, cols) = v.dim();
        Self {
            v,
            beta,
            rows,
            cols,
            dtp: Array2::zeros((rows, cols)),
            z_hat: Array2::zeros((rows, cols)),
            diff: vec![0.0; n_differences(rows, cols)],
        }
    }

    /// Sets `z_hat = v - beta D^T p`.
    fn dual_point(&mut self, p: &[f64]) {
        gradient_transpose(p, self.rows, self.cols, &mut self.dtp);
        let beta = self.beta;
        ndarray::Zip::from(&mut self.z_hat)
            .and(self.v)
            .and(&self.dtp)
            .for_each(|z, &vv, &d| *z = vv - beta * d);
    }

    /// Duality gap of the pair `(z_hat(p), p)`. Since `z_hat = v - beta D^T p`,
    /// the gap collapses to `sum_k |d_k| - p_k d_k` with `d = D z_hat`, which is
    /// free of cancellation.
    fn gap_at(&mut self, p: &[f64]) -> f64 {
        self.dual_point(p);
        gradient(&self.z_hat, &mut self.diff);
        self.diff
            .iter()
            .zip(p)
            .map(|(d, pk)| d.abs() - pk * d)
            .sum::<f64>()
            .max(0.0)
    }

    fn primal(&mut self, z: &Array2<f64>) -> f64 {
        gradient(z, &mut self.diff);
        let fid: f64 = z
            .iter()
            .zip(self.v.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        fid / (2.0 * self.beta) + self.diff.iter().map(|d| d.abs()).sum::<f64>()
    }

    /// Dual objective at the `p` last passed to [`Work::dual_point`].
    fn dual(&self) -> f64 {
        let cross: f64 = self.v.iter().zip(self.dtp.iter()).map(|(a, b)| a * b).sum();
        let sq: f64 = self.dtp.iter().map(|a| a * a).sum();
        cross - 0.5 * self.beta * sq
    }
}

fn check_inputs(v: &Array2<f64>, beta: f64, tol: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("prox input is not finite".into()));
    }
    Ok(())
}

fn initial_dual(nd: usize, warm: Option<&[f64]>) -> Vec<f64> {
    match warm {
        Some(w) if w.len() == nd => w.iter().map(|x| x.clamp(-1.0, 1.0)).collect(),
        _ => vec![0.0; nd],
    }
}

/// Approximate `argmin_z (1/(2 beta)) ||z - v||^2 + TV(z)` by the primal-dual
/// hybrid gradient method with `sigma = tau = 1/sqrt(8)` and `theta = 1`.
///
/// Stops once the primal-dual gap is at most `tol`. Of the PDHG iterate and
/// the dual-induced point `v - beta D^T p`, the one with the smaller gap is
/// returned.
pub fn tv_prox_pdhg(
    v: &Array2<f64>,
    beta: f64,
    tol: f64,
    max_iter: usize,
    warm_dual: Option<&[f64]>,
) -> Result<TvProx> {
    check_inputs(v, beta, tol)?;
    let (rows, cols) = v.dim();
    let nd = n_differences(rows, cols);
    let step = 1.0 / DIFF_NORM_SQ_BOUND.sqrt();
    let (sigma, tau) = (step, step);

    let mut p = initial_dual(nd, warm_dual);
    let mut w = Work::new(v, beta);
    w.dual_point(&p);
    let mut z = w.z_hat.clone();
    let mut z_bar = z.clone();
    let mut z_old = z.clone();
    let mut dz = vec![0.0; nd];

    let ratio = tau / beta;
    let mut gap = f64::INFINITY;
    for it in 0..=max_iter {
        if it % GAP_EVERY == 0 || it == max_iter {
            let gap_hat = w.gap_at(&p);
            let gap_iter = (w.primal(&z) - w.dual()).max(0.0);
            gap = gap_hat.min(gap_iter);
            if gap <= tol {
                let image = if gap_hat <= gap_iter { w.z_hat } else { z };
                return Ok(TvProx {
                    image,
                    dual: p,
                    gap,
                    iterations: it,
                });
            }
        }
        if it == max_iter {
            break;
        }
        gradient(&z_bar, &mut dz);
        for (pk, dk) in p.iter_mut().zip(dz.iter()) {
            *pk = (*pk + sigma * dk).clamp(-1.0, 1.0);
        }
        gradient_transpose(&p, rows, cols, &mut w.dtp);
        z_old.assign(&z);
        ndarray::Zip::from(&mut z)
            .and(&w.dtp)
            .and(v)
            .for_each(|zn, &d, &vv| *zn = (*zn - tau * d + ratio * vv) / (1.0 + ratio));
        ndarray::Zip::from(&mut z_bar)
            .and(&z)
            .and(&z_old)
            .for_each(|zb, &zn, &zo| *zb = 2.0 * zn - zo);
    }
    Err(Error::InnerSolver {
        iterations: max_iter,
        gap,
        tol,
    })
}

/// Same minimizer as [`tv_prox_pdhg`], computed by accelerated projected
/// gradient on the dual `min_{|p| <= 1} (beta/2) ||D^T p||^2 - <v, D^T p>`
/// with step `1/(8 beta)` and gradient-based momentum restarts. Returns
/// `v - beta D^T p` once its duality gap is at most `tol`.
pub fn tv_prox_fista(
    v: &Array2<f64>,
    beta: f64,
    tol: f64,
    max_iter: usize,
    warm_dual: Option<&[f64]>,
) -> Result<TvProx> {
    check_inputs(v, beta, tol)?;
    let (rows, cols) = v.dim();
    let nd = n_differences(rows, cols);
    let step = 1.0 / (DIFF_NORM_SQ_BOUND * beta);

    let mut p = initial_dual(nd, warm_dual);
    let mut q = p.clone();
    let mut p_old = p.clone();
    let mut g = vec![0.0; nd];
    let mut w = Work::new(v, beta);
    let mut momentum = 1.0f64;
    let mut gap = f64::INFINITY;
    for it in 0..=max_iter {
        if it % GAP_EVERY == 0 || it == max_iter {
            gap = w.gap_at(&p);
            if gap <= tol {
                return Ok(TvProx {
                    image: w.z_hat,
                    dual: p,
                    gap,
                    iterations: it,
                });
            }
        }
        if it == max_iter {
            break;
        }
        // the dual gradient at q is -D z_hat(q)
        w.dual_point(&q);
        gradient(&w.z_hat, &mut g);
        p_old.copy_from_slice(&p);
        let mut restart = 0.0;
        for k in 0..nd {
            p[k] = (q[k] + step * g[k]).clamp(-1.0, 1.0);
            restart += (q[k] - p[k]) * (p[k] - p_old[k]);
        }
        if restart > 0.0 {
            momentum = 1.0;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let m = (momentum - 1.0) / next;
        for k in 0..nd {
            q[k] = p[k] + m * (p[k] - p_old[k]);
        }
        momentum = next;
    }
    Err(Error::InnerSolver {
        iterations: max_iter,
        gap,
        tol,
    })
}

/// Exact solution of the 1D problem
/// `argmin_x (1/2) ||x - input||^2 + lambda sum |x[k+1] - x[k]|`
/// by Condat's direct algorithm.
pub fn tv1d_denoise(input: &[f64], lambda: f64, output: &mut [f64]) {
    let n = input.len();
    assert_eq!(output.len(), n);
    if n == 0 {
        return;
    }
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = lambda;
    let mut umax = -lambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;
    let twolambda = 2.0 * lambda;
    loop {
        while k == n - 1 {
            if umin < 0.0 {
                loop {
                    output[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                loop {
                    output[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = -lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    output[k0] = vmin;
                    k0 += 1;
                }
                return;
            }
        }
        umin += input[k + 1] - vmin;
        if umin < -lambda {
            loop {
                output[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = input[k0];
            vmax = vmin + twolambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            loop {
                output[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = input[k0];
            vmin = vmax - twolambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
            umin = lambda;
        }
        if umax <= -lambda {
            kplus = k;
            vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
            umax = -lambda;
        }
    }
}

/// Same minimizer as [`tv_prox_pdhg`], computed by alternating exact
/// minimization of the dual over the horizontal and the vertical difference
/// fields. Each block update is a set of independent 1D problems solved by
/// [`tv1d_denoise`]; the vertical block carries FISTA-type momentum with
/// gradient restarts. Returns `v - beta D^T p` once its duality gap is at
/// most `tol`.
#[allow(clippy::needless_range_loop)]
pub fn tv_prox_alternating(
    v: &Array2<f64>,
    beta: f64,
    tol: f64,
    max_iter: usize,
    warm_dual: Option<&[f64]>,
) -> Result<TvProx> {
    check_inputs(v, beta, tol)?;
    let (rows, cols) = v.dim();
    let nd = n_differences(rows, cols);
    let nh = rows * cols.saturating_sub(1);
    let mut p = initial_dual(nd, warm_dual);
    let mut pv_bar = p[nh..].to_vec();
    let mut pv_old = pv_bar.clone();
    let mut w = Work::new(v, beta);
    let mut line_in = vec![0.0; rows.max(cols)];
    let mut line_out = vec![0.0; rows.max(cols)];
    let mut momentum = 1.0f64;
    let mut gap = f64::INFINITY;

    for it in 0..=max_iter {
        gap = w.gap_at(&p);
        if gap <= tol {
            return Ok(TvProx {
                image: w.z_hat,
                dual: p,
                gap,
                iterations: it,
            });
        }
        if it == max_iter {
            break;
        }
        // horizontal block against the extrapolated vertical field; each
        // row sees v - beta D_v^T pv_bar
        let vs = v.as_slice().expect("standard layout");
        for r in 0..rows {
            let n = cols;
            for c in 0..n {
                let k = r * cols + c;
                let up = if r > 0 { pv_bar[k - cols] } else { 0.0 };
                let down = if r + 1 < rows { pv_bar[k] } else { 0.0 };
                line_in[c] = vs[k] - beta * (up - down);
            }
            tv1d_denoise(&line_in[..n], beta, &mut line_out[..n]);
            let mut acc = 0.0;
            for c in 0..n.saturating_sub(1) {
                acc -= (line_in[c] - line_out[c]) / beta;
                p[r * (n - 1) + c] = acc.clamp(-1.0, 1.0);
            }
        }
        // vertical block against the new horizontal field
        pv_old.copy_from_slice(&p[nh..]);
        let hstride = cols.saturating_sub(1);
        for c in 0..cols {
            let n = rows;
            for r in 0..n {
                let left = if c > 0 { p[r * hstride + c - 1] } else { 0.0 };
                let right = if c + 1 < cols { p[r * hstride + c] } else { 0.0 };
                line_in[r] = vs[r * cols + c] - beta * (left - right);
            }
            tv1d_denoise(&line_in[..n], beta, &mut line_out[..n]);
            let mut acc = 0.0;
            for r in 0..n.saturating_sub(1) {
                acc -= (line_in[r] - line_out[r]) / beta;
                p[nh + r * cols + c] = acc.clamp(-1.0, 1.0);
            }
        }
        // restart when the step opposes the momentum direction
        let restart: f64 = pv_bar
            .iter()
            .zip(&p[nh..])
            .zip(&pv_old)
            .map(|((b, n), o)| (b - n) * (n - o))
            .sum();
        if restart > 0.0 {
            momentum = 1.0;
        }
        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let m = (momentum - 1.0) / next;
        for ((b, n), o) in pv_bar.iter_mut().zip(&p[nh..]).zip(&pv_old) {
            *b = n + m * (n - o);
        }
        momentum = next;
    }
    Err(Error::InnerSolver {
        iterations: max_iter,
        gap,
        tol,
    })
}
