//! Strongly convex regularizers and their conjugate-gradient maps.
//!
//! Each variant provides the value `R(x)`, the convexity modulus `c0`, and
//! `conj_grad(xi) = argmin_z { R(z) - <xi, z> }`, which is the gradient of the
//! Fenchel conjugate `R*`. Pairings `<xi, z>` use the weights of the grid.

pub mod tv;

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{DomainNorm, WeightedVector};

pub use self::tv::{tv1d_denoise, tv_prox_alternating, tv_prox_fista, tv_prox_pdhg, tv_value, TvProx};

/// Slack on the weighted mass when testing simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-8;

/// Algorithm for the TV proximal map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvSolver {
    /// Primal-dual hybrid gradient, see [`tv_prox_pdhg`].
    Pdhg,
    /// Restarted accelerated dual projected gradient, see [`tv_prox_fista`].
    Fista,
    /// Alternating exact row/column minimization, see [`tv_prox_alternating`].
    #[default]
    Alternating,
}

/// Inner-solver settings for the TV-based regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSettings {
    pub solver: TvSolver,
    /// Absolute gap tolerance; `None` means `1e-10 * (1 + ||xi||)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for TvSettings {
    fn default() -> Self {
        Self {
            solver: TvSolver::default(),
            tol: None,
            max_iter: 20_000,
        }
    }
}

/// Warm-start data for iterative conjugate-gradient maps (the TV dual field).
#[derive(Debug, Clone, PartialEq)]
pub struct InnerHint(Arc<Vec<f64>>);

impl InnerHint {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// `(scale/2) ||x||^2`.
    Quadratic { scale: f64 },
    /// Negative Boltzmann-Shannon entropy restricted to probability densities
    /// on the grid; strongly convex in the weighted L1 norm with `c0 = 1/2`.
    EntropySimplex,
    /// `(1/(2 beta)) ||x||^2 + TV(x)` on a `rows x cols` image with unit weights.
    TvStrong {
        beta: f64,
        rows: usize,
        cols: usize,
        settings: TvSettings,
    },
    /// `l1 ||x||_1 + (scale/2) ||x||^2`; with `scale = alpha` this is the
    /// strongly convex perturbation of a pure L1 penalty.
    ElasticNet { l1: f64, scale: f64 },
}

impl Regularizer {
    pub fn quadratic(scale: f64) -> Result<Self> {
        positive("scale", scale)?;
        Ok(Self::Quadratic { scale })
    }

    pub fn tv_strong(beta: f64, rows: usize, cols: usize) -> Result<Self> {
        positive("beta", beta)?;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("image shape must be non-empty".into()));
        }
        Ok(Self::TvStrong {
            beta,
            rows,
            cols,
            settings: TvSettings::default(),
        })
    }

    pub fn elastic_net(l1: f64, scale: f64) -> Result<Self> {
        if !(l1 >= 0.0) {
            return Err(Error::InvalidParameter(format!("l1 weight must be >= 0, got {l1}")));
        }
        positive("scale", scale)?;
        Ok(Self::ElasticNet { l1, scale })
    }

    pub fn with_tv_settings(self, new: TvSettings) -> Self {
        match self {
            Self::TvStrong { beta, rows, cols, .. } => Self::TvStrong {
                beta,
                rows,
                cols,
                settings: new,
            },
            other => other,
        }
    }

    /// Strong convexity modulus `c0`.
    pub fn modulus(&self) -> f64 {
        match self {
            Self::Quadratic { scale } | Self::ElasticNet { scale, .. } => scale / 2.0,
            Self::EntropySimplex => 0.5,
            Self::TvStrong { beta, .. } => 1.0 / (2.0 * beta),
        }
    }

    /// Norm on X in which the modulus holds.
    pub fn primal_norm(&self) -> DomainNorm {
        match self {
            Self::EntropySimplex => DomainNorm::L1,
            _ => DomainNorm::L2,
        }
    }

    /// `R(x)`; `+inf` outside the domain.
    pub fn value(&self, x: &WeightedVector) -> f64 {
        match self {
            Self::Quadratic { scale } => 0.5 * scale * x.norm_squared(),
            Self::EntropySimplex => {
                if x.values().iter().any(|v| *v < 0.0 || !v.is_finite())
                    || (x.integral() - 1.0).abs() > SIMPLEX_TOL
                {
                    return f64::INFINITY;
                }
                x.values()
                    .iter()
                    .zip(x.weights().iter())
                    .map(|(v, w)| if *v > 0.0 { w * v * v.ln() } else { 0.0 })
                    .sum()
            }
            Self::TvStrong { beta, rows, cols, .. } => {
                if x.len() != rows * cols {
                    return f64::INFINITY;
                }
                let img = as_image(x.values(), *rows, *cols);
                x.values().iter().map(|v| v * v).sum::<f64>() / (2.0 * beta) + tv_value(&img)
            }
            Self::ElasticNet { l1, scale } => l1 * x.norm_l1() + 0.5 * scale * x.norm_squared(),
        }
    }

    /// `grad R*(xi)`, the unique minimizer of `R(z) - <xi, z>`.
    pub fn conj_grad(&self, xi: &WeightedVector) -> Result<WeightedVector> {
        self.conj_grad_hinted(xi, None).map(|(x, _)| x)
    }

    /// As [`Regularizer::conj_grad`], optionally warm-started. The returned
    /// hint can seed the next call at a nearby `xi`.
    pub fn conj_grad_hinted(
        &self,
        xi: &WeightedVector,
        hint: Option<&InnerHint>,
    ) -> Result<(WeightedVector, Option<InnerHint>)> {
        if !xi.is_finite() {
            return Err(Error::InvalidParameter("dual argument is not finite".into()));
        }
        match self {
            Self::Quadratic { scale } => Ok((xi.scaled(1.0 / scale), None)),
            Self::EntropySimplex => Ok((softmax_map(xi), None)),
            Self::ElasticNet { l1, scale } => {
                let v = xi.values().mapv(|s| soft_threshold(s, *l1) / scale);
                Ok((xi.with_values(v)?, None))
            }
            Self::TvStrong {
                beta,
                rows,
                cols,
                settings,
            } => {
                crate::error::check_len(rows * cols, xi.len())?;
                let tol = settings.tol.unwrap_or(1e-10 * (1.0 + xi.norm()));
                let v = as_image(xi.values(), *rows, *cols) * *beta;
                let solve = match settings.solver {
                    TvSolver::Pdhg => tv_prox_pdhg,
                    TvSolver::Fista => tv_prox_fista,
                    TvSolver::Alternating => tv_prox_alternating,
                };
                let out = solve(
                    &v,
                    *beta,
                    tol,
                    settings.max_iter,
                    hint.map(InnerHint::as_slice),
                )?;
                let x = xi.with_values(Array1::from_iter(out.image.iter().copied()))?;
                Ok((x, Some(InnerHint(Arc::new(out.dual)))))
            }
        }
    }

    /// `R*(xi) = <xi, x> - R(x)` with `x = conj_grad(xi)`.
    pub fn conjugate_value(&self, xi: &WeightedVector) -> Result<f64> {
        let x = self.conj_grad(xi)?;
        Ok(xi.dot(&x) - self.value(&x))
    }

    /// Bregman distance `D(x, x0) = R(x) - R(x0) - <xi0, x - x0>`.
    pub fn bregman(
        &self,
        x: &WeightedVector,
        x0: &WeightedVector,
        xi0: &WeightedVector,
    ) -> BregmanReport {
        let rx = self.value(x);
        let value = if rx.is_infinite() {
            f64::INFINITY
        } else {
            // entropy: use the KL form, which is exact on the simplex
            match self {
                Self::EntropySimplex => kl_divergence(x, x0),
                _ => rx - self.value(x0) - xi0.dot(&x.sub(x0)),
            }
        };
        BregmanReport {
            value,
            point: x.clone(),
            base: x0.clone(),
            subgradient: xi0.clone(),
        }
    }
}

/// Result of a Bregman distance evaluation.
#[derive(Debug, Clone)]
pub struct BregmanReport {
    pub value: f64,
    pub point: WeightedVector,
    pub base: WeightedVector,
    pub subgradient: WeightedVector,
}

/// Weighted softmax `x_i = exp(xi_i - M) / sum_j w_j exp(xi_j - M)`, `M = max xi`.
/// The result integrates to one against the weights.
pub fn softmax_map(xi: &WeightedVector) -> WeightedVector {
    let m = xi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = xi.values().mapv(|s| (s - m).exp());
    let z: f64 = e.iter().zip(xi.weights().iter()).map(|(a, w)| a * w).sum();
    xi.with_values(e / z).expect("same grid")
}

fn kl_divergence(x: &WeightedVector, x0: &WeightedVector) -> f64 {
    let mut total = 0.0;
    for ((a, b), w) in x.values().iter().zip(x0.values().iter()).zip(x.weights().iter()) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return f64::INFINITY;
            }
            total += w * a * (a / b).ln();
        }
    }
    // both sides have unit mass up to SIMPLEX_TOL; include the mass mismatch term
    total + x0.integral() - x.integral()
}

fn soft_threshold(s: f64, t: f64) -> f64 {
    if s > t {
        s - t
    } else if s < -t {
        s + t
    } else {
        0.0
    }
}

pub(crate) fn as_image(values: &Array1<f64>, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), values.to_vec()).expect("image shape")
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}
