use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::flow::{integrate_until, stability_max_step, IntegrateConfig, Scheme, StopReason};
use crate::operator::{ForwardOperator, WeightedVector};
use crate::problems::Problem;
use crate::regularizer::Regularizer;

/// Residual at which a perturbed solve counts as converged.
pub const PERTURBATION_RESIDUAL_TOL: f64 = 1e-8;
/// Step cap per perturbed solve.
pub const PERTURBATION_MAX_STEPS: usize = 1_000_000;

/// Convex base functional `l1 ||x||_1 + (quadratic/2) ||x||^2`; it need not be
/// strongly convex (`quadratic = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaseFunctional {
    pub l1: f64,
    pub quadratic: f64,
}

impl BaseFunctional {
    pub fn value(&self, x: &WeightedVector) -> f64 {
        self.l1 * x.norm_l1() + 0.5 * self.quadratic * x.norm_squared()
    }

    /// `R + alpha * Psi` with `Psi = (1/2) ||x||^2`.
    pub fn perturbed(&self, alpha: f64) -> Result<Regularizer> {
        Regularizer::elastic_net(self.l1, self.quadratic + alpha)
    }
}

/// `Psi(x) = (1/2) ||x||^2`.
pub fn psi(x: &WeightedVector) -> f64 {
    0.5 * x.norm_squared()
}

#[derive(Debug, Clone)]
pub struct PerturbationSetup {
    pub base: BaseFunctional,
    /// Strictly decreasing positive weights.
    pub alphas: Vec<f64>,
    /// Known limit `x*`, when available; otherwise the solution at the
    /// smallest `alpha` stands in for it.
    pub reference: Option<WeightedVector>,
}

impl PerturbationSetup {
    fn validate(&self) -> Result<()> {
        if !(self.base.l1 >= 0.0 && self.base.quadratic >= 0.0) {
            return Err(Error::InvalidParameter("base weights must be >= 0".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::InvalidParameter("alpha ladder is empty".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter("alphas must be positive".into()));
        }
        if self.alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("alphas must be strictly decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationRow {
    pub alpha: f64,
    #[serde(serialize_with = "values")]
    pub x: WeightedVector,
    /// `||x_alpha - x*||`.
    pub distance: f64,
    /// Base functional `R(x_alpha)`.
    pub r_value: f64,
    pub psi_value: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub rows: Vec<PerturbationRow>,
    #[serde(serialize_with = "values")]
    pub reference: WeightedVector,
    pub reference_r: f64,
    pub reference_psi: f64,
    /// Some solve hit its step cap before converging.
    pub partial: bool,
}

fn values<S: serde::Serializer>(v: &WeightedVector, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.values().iter())
}

/// Solves `min R + alpha Psi subject to A x = y` for each `alpha` by running
/// the dual flow on exact data until the residual drops below
/// [`PERTURBATION_RESIDUAL_TOL`].
pub fn perturbation_experiment(
    setup: &PerturbationSetup,
    op: &ForwardOperator,
    y: &WeightedVector,
) -> Result<PerturbationReport> {
    setup.validate()?;
    check_len(op.shape().0, y.len())?;
    let mut solved = Vec::with_capacity(setup.alphas.len());
    let mut partial = false;
    for &alpha in &setup.alphas {
        let reg = setup.base.perturbed(alpha)?;
        let problem = Problem::new(op.clone(), reg, y.clone(), 0.0)?;
        let dt = 0.9 * stability_max_step(&problem.op, &problem.reg);
        let dt = if dt.is_finite() { dt } else { 1.0 };
        let cfg = IntegrateConfig::new(Scheme::Rk4, dt)
            .with_max_steps(PERTURBATION_MAX_STEPS)
            .with_keep_states(None)
            .with_record_every(usize::MAX);
        let traj = integrate_until(&problem, &cfg, |s| s.residual_norm <= PERTURBATION_RESIDUAL_TOL)?;
        let converged = traj.stop_reason == StopReason::Predicate;
        partial |= !converged;
        let s = traj.final_state;
        solved.push((alpha, s.x, s.residual_norm, converged));
    }
    let reference = match &setup.reference {
        Some(r) => {
            check_len(op.shape().1, r.len())?;
            WeightedVector::new(r.values().clone(), op.domain().clone())?
        }
        None => solved.last().expect("non-empty ladder").1.clone(),
    };
    let rows = solved
        .into_iter()
        .map(|(alpha, x, residual, converged)| PerturbationRow {
            alpha,
            distance: x.sub(&reference).norm(),
            r_value: setup.base.value(&x),
            psi_value: psi(&x),
            x,
            residual,
            converged,
        })
        .collect();
    Ok(PerturbationReport {
        rows,
        reference_r: setup.base.value(&reference),
        reference_psi: psi(&reference),
        reference,
        partial,
    })
}
