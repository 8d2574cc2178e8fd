//! Experiment fixtures: the Gaussian-kernel deconvolution and the
//! parallel-beam tomography problems, noise generation, and the
//! strongly convex perturbation experiment.

mod perturbation;
mod phantom;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use self::perturbation::{
    perturbation_experiment, psi, BaseFunctional, PerturbationReport, PerturbationRow,
    PerturbationSetup, PERTURBATION_MAX_STEPS, PERTURBATION_RESIDUAL_TOL,
};
pub use self::phantom::{shepp_logan_phantom, MODIFIED_SHEPP_LOGAN};
use crate::error::{check_len, Error, Result};
use crate::operator::{ForwardOperator, Grid, WeightedVector};
use crate::regularizer::Regularizer;

/// Norm used for relative reconstruction errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorNorm {
    /// Weighted L1 on the domain grid.
    L1,
    /// Weighted L2 on the domain grid.
    L2,
}

impl ErrorNorm {
    pub fn eval(self, v: &WeightedVector) -> f64 {
        match self {
            Self::L1 => v.norm_l1(),
            Self::L2 => v.norm(),
        }
    }
}

/// A linear inverse problem `A x = y` observed through noisy data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub op: ForwardOperator,
    pub reg: Regularizer,
    /// Exact data `y`, when known.
    pub exact_data: Option<WeightedVector>,
    /// Noisy data `y^delta`.
    pub data: WeightedVector,
    /// Noise level `delta`.
    pub delta: f64,
    /// Ground truth `x^dagger`, when known.
    pub truth: Option<WeightedVector>,
    pub error_norm: ErrorNorm,
    /// Step size used by the experiment presets.
    pub preset_dt: Option<f64>,
    /// `(rows, cols)` when X is an image.
    pub image_shape: Option<(usize, usize)>,
}

impl Problem {
    pub fn new(op: ForwardOperator, reg: Regularizer, data: WeightedVector, delta: f64) -> Result<Self> {
        check_len(op.shape().0, data.len())?;
        if !(delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {delta}")));
        }
        let data = WeightedVector::new(data.into_values(), op.range().clone())?;
        Ok(Self {
            op,
            reg,
            exact_data: None,
            data,
            delta,
            truth: None,
            error_norm: ErrorNorm::L2,
            preset_dt: None,
            image_shape: None,
        })
    }

    pub fn with_truth(mut self, truth: WeightedVector) -> Result<Self> {
        check_len(self.op.shape().1, truth.len())?;
        self.truth = Some(WeightedVector::new(truth.into_values(), self.op.domain().clone())?);
        Ok(self)
    }

    /// Attaches exact data; `delta` is reset to `||y^delta - y||_Y`.
    pub fn with_exact_data(mut self, y: WeightedVector) -> Result<Self> {
        check_len(self.data.len(), y.len())?;
        let y = WeightedVector::new(y.into_values(), self.op.range().clone())?;
        self.delta = self.data.sub(&y).norm();
        self.exact_data = Some(y);
        Ok(self)
    }

    pub fn with_error_norm(mut self, norm: ErrorNorm) -> Self {
        self.error_norm = norm;
        self
    }

    pub fn with_preset_dt(mut self, dt: f64) -> Self {
        self.preset_dt = Some(dt);
        self
    }

    /// Same operator, regularizer and truth with different data.
    pub fn with_data(&self, data: WeightedVector, delta: f64) -> Result<Self> {
        let mut p = self.clone();
        check_len(p.data.len(), data.len())?;
        p.data = WeightedVector::new(data.into_values(), p.op.range().clone())?;
        p.delta = delta;
        Ok(p)
    }

    pub fn relative_error(&self, x: &WeightedVector) -> Option<f64> {
        let truth = self.truth.as_ref()?;
        crate::diagnostics::relative_error(x, truth, self.error_norm).ok()
    }
}

/// How the noise magnitude is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// `||y^delta - y|| = delta`.
    Absolute(f64),
    /// `||y^delta - y|| = delta_rel * ||y||`.
    Relative(f64),
}

/// Adds seeded Gaussian noise rescaled so that `||y^delta - y||_Y` equals the
/// target exactly. Returns the noisy data and the realized `delta`.
pub fn add_gaussian_noise(
    y: &WeightedVector,
    target: NoiseTarget,
    seed: u64,
) -> Result<(WeightedVector, f64)> {
    if !y.is_finite() {
        return Err(Error::InvalidParameter("data is not finite".into()));
    }
    let delta = match target {
        NoiseTarget::Absolute(d) => d,
        NoiseTarget::Relative(r) => r * y.norm(),
    };
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("noise level must be positive, got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let e = y.with_values(Array1::from_iter(
            (0..y.len()).map(|_| StandardNormal.sample(&mut rng)),
        ))?;
        let ne = e.norm();
        if ne > 0.0 {
            return Ok((y.add_scaled(delta / ne, &e), delta));
        }
    }
}

/// Kernel of the deconvolution fixture.
pub fn gaussian_kernel(s: f64, t: f64) -> f64 {
    4.0 * (-(s - t) * (s - t) / 0.0064).exp()
}

/// Unnormalized bimodal density of the deconvolution fixture.
pub fn bimodal_profile(s: f64) -> f64 {
    (-60.0 * (s - 0.3) * (s - 0.3)).exp() + 0.3 * (-40.0 * (s - 0.7) * (s - 0.7)).exp()
}

/// Number of grid nodes of the deconvolution preset (800 subintervals).
pub const DECONVOLUTION_GRID_N: usize = 801;
/// Step size of the deconvolution preset.
pub const DECONVOLUTION_DT: f64 = 0.4;
/// Step size of the tomography preset.
pub const TOMOGRAPHY_DT: f64 = 0.4e-3;
/// Desk-scale tomography geometry: image side, angles, detectors.
pub const TOMOGRAPHY_DESK: (usize, usize, usize) = (64, 30, 95);

/// Fredholm deconvolution with entropy regularization on the simplex.
pub fn gaussian_deconvolution_fixture(grid_n: usize, delta: f64, seed: u64) -> Result<Problem> {
    let op = ForwardOperator::build_integral_operator(gaussian_kernel, grid_n)?;
    let nodes = Grid::unit_interval_nodes(grid_n);
    let raw = WeightedVector::new(nodes.mapv(bimodal_profile), op.domain().clone())?;
    let truth = raw.scaled(1.0 / raw.integral());
    let y = op.apply(&truth)?;
    let (data, delta) = add_gaussian_noise(&y, NoiseTarget::Absolute(delta), seed)?;
    let mut p = Problem::new(op, Regularizer::EntropySimplex, data, delta)?
        .with_truth(truth)?
        .with_error_norm(ErrorNorm::L1)
        .with_preset_dt(DECONVOLUTION_DT);
    p.exact_data = Some(y);
    Ok(p)
}

/// Parallel-beam tomography of the modified Shepp-Logan phantom with the
/// `(1/2)||x||^2 + TV(x)` regularizer (`beta = 1`).
pub fn shepp_logan_fixture(
    image_n: usize,
    n_angles: usize,
    n_detectors: usize,
    delta_rel: f64,
    seed: u64,
) -> Result<Problem> {
    let op = ForwardOperator::build_parallel_beam(image_n, n_angles, n_detectors)?;
    let img = shepp_logan_phantom(image_n);
    let truth = WeightedVector::new(Array1::from_iter(img.iter().copied()), op.domain().clone())?;
    let y = op.apply(&truth)?;
    let (data, delta) = add_gaussian_noise(&y, NoiseTarget::Relative(delta_rel), seed)?;
    let reg = Regularizer::tv_strong(1.0, image_n, image_n)?;
    let mut p = Problem::new(op, reg, data, delta)?
        .with_truth(truth)?
        .with_error_norm(ErrorNorm::L2)
        .with_preset_dt(TOMOGRAPHY_DT);
    p.exact_data = Some(y);
    p.image_shape = Some((image_n, image_n));
    Ok(p)
}
