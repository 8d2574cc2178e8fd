//! Trace records, error metrics, the dual objective, the energy inequality
//! along trajectories, semi-convergence summaries and log-log rate fits.

use std::io::Write;

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::flow::DualState;
use crate::operator::WeightedVector;
use crate::problems::{ErrorNorm, Problem};
use crate::regularizer::InnerHint;

/// Scalars recorded for one flow sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub residual_norm: f64,
    pub r_value: f64,
    pub relative_error: Option<f64>,
    pub dual_objective: f64,
    /// `(t + a) * residual_norm^2`.
    pub theta: f64,
}

impl TraceRecord {
    pub fn from_state(problem: &Problem, state: &DualState, theta_a: f64) -> Self {
        let r_value = problem.reg.value(&state.x);
        Self {
            t: state.t,
            residual_norm: state.residual_norm,
            r_value,
            relative_error: problem.relative_error(&state.x),
            dual_objective: dual_objective_from_parts(problem, state, r_value),
            theta: (state.t + theta_a) * state.residual_norm * state.residual_norm,
        }
    }

    pub const CSV_HEADER: &'static str = "t,residual_norm,R_value,relative_error,dual_objective,theta";

    pub fn csv_row(&self) -> String {
        let re = self
            .relative_error
            .map_or_else(String::new, |v| format!("{v:.17e}"));
        format!(
            "{:.17e},{:.17e},{:.17e},{},{:.17e},{:.17e}",
            self.t, self.residual_norm, self.r_value, re, self.dual_objective, self.theta
        )
    }
}

pub fn write_trace_csv(records: &[TraceRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "{}", TraceRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// `d(lambda) = R*(A* lambda) - <lambda, y^delta>`, with `R*` evaluated
/// through the conjugate-gradient pair.
pub fn dual_objective(problem: &Problem, lambda: &WeightedVector) -> Result<f64> {
    dual_objective_hinted(problem, lambda, &mut None)
}

/// As [`dual_objective`], warm-starting the inner solver from `hint` and
/// replacing it with the new one.
fn dual_objective_hinted(
    problem: &Problem,
    lambda: &WeightedVector,
    hint: &mut Option<InnerHint>,
) -> Result<f64> {
    let xi = problem.op.adjoint_apply(lambda)?;
    let (x, next) = problem.reg.conj_grad_hinted(&xi, hint.as_ref())?;
    *hint = next;
    Ok(xi.dot(&x) - problem.reg.value(&x) - lambda.dot(&problem.data))
}

fn dual_objective_from_parts(problem: &Problem, state: &DualState, r_value: f64) -> f64 {
    state.xi.dot(&state.x) - r_value - state.lambda.dot(&problem.data)
}

pub fn relative_error(x: &WeightedVector, truth: &WeightedVector, norm: ErrorNorm) -> Result<f64> {
    check_len(truth.len(), x.len())?;
    let denom = norm.eval(truth);
    if denom == 0.0 {
        return Err(Error::InvalidParameter("reference has zero norm".into()));
    }
    Ok(norm.eval(&x.sub(truth)) / denom)
}

/// `D_R^xi(x^dagger, x(t))` with `xi = A* lambda(t)`; `+inf` when the truth
/// lies outside the domain of `R`.
pub fn bregman_error(problem: &Problem, state: &DualState) -> Result<f64> {
    let truth = problem
        .truth
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("problem has no ground truth".into()))?;
    Ok(problem.reg.bregman(truth, &state.x, &state.xi).value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemiConvergence {
    pub t_opt: f64,
    pub re_min: f64,
    /// The minimum is neither the first nor the last sample.
    pub is_interior: bool,
}

/// Location of the smallest relative error along a trace; `None` when the
/// trace carries no errors.
pub fn semi_convergence_summary(records: &[TraceRecord]) -> Option<SemiConvergence> {
    let errors: Vec<(usize, f64, f64)> = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.relative_error.map(|e| (i, r.t, e)))
        .collect();
    let (idx, t_opt, re_min) = errors
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64, f64)>, cur| match best {
            Some(b) if b.2 <= cur.2 => Some(b),
            _ => Some(cur),
        })?;
    let first = errors.first().map(|e| e.0);
    let last = errors.last().map(|e| e.0);
    Some(SemiConvergence {
        t_opt,
        re_min,
        is_interior: Some(idx) != first && Some(idx) != last,
    })
}

/// Least-squares line through `(log delta, log error)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub pairs: Vec<(f64, f64)>,
    /// Fitted exponent.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(d, e)| !(*d > 0.0) || !(*e > 0.0)) {
        return Err(Error::DegenerateFit("noise levels and errors must be positive".into()));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|(d, e)| (d.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(Error::DegenerateFit("noise levels are not distinct".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(RateFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Probe points `mu` for the energy inequality.
#[derive(Debug, Clone)]
pub enum Probe {
    Zero,
    /// `mu = c * lambda(t)`.
    ScaledLambda(f64),
    Fixed { id: String, mu: WeightedVector },
}

impl Probe {
    pub fn id(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::ScaledLambda(c) if *c == 1.0 => "lambda".into(),
            Self::ScaledLambda(c) => format!("{c}*lambda"),
            Self::Fixed { id, .. } => id.clone(),
        }
    }
}

/// One evaluation of
/// `(t/2)||A x - y||^2 + (||lambda - mu||^2 - ||mu||^2)/(2t) <= d(mu) - d(lambda(t))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    pub mu_id: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `max(0, lhs - rhs)`.
    pub violation: f64,
    /// Violation exceeds the slack `slack * (1 + t)`.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
}

impl EnergyReport {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged).count()
    }

    pub fn max_violation(&self) -> f64 {
        self.rows.iter().map(|r| r.violation).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,mu_id,lhs,rhs,violation")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.17e},{},{:.17e},{:.17e},{:.17e}",
                r.t, r.mu_id, r.lhs, r.rhs, r.violation
            )?;
        }
        Ok(())
    }
}

/// Default slack coefficient: violations up to `1e-6 * (1 + t)` are tolerated.
pub const ENERGY_SLACK: f64 = 1e-6;

/// Streaming checker for the energy inequality; feed it states in time order.
pub struct EnergyMonitor<'a> {
    problem: &'a Problem,
    /// Probe, its constant `d(mu)` if any, and a warm start for moving probes.
    probes: Vec<(Probe, Option<f64>, Option<InnerHint>)>,
    slack: f64,
    report: EnergyReport,
}

impl<'a> EnergyMonitor<'a> {
    pub fn new(problem: &'a Problem, probes: Vec<Probe>) -> Result<Self> {
        let probes = probes
            .into_iter()
            .map(|p| {
                let fixed = match &p {
                    Probe::Zero => Some(dual_objective(problem, &WeightedVector::zeros(problem.op.range()))?),
                    Probe::Fixed { mu, .. } => Some(dual_objective(problem, mu)?),
                    Probe::ScaledLambda(_) => None,
                };
                Ok((p, fixed, None))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            probes,
            slack: ENERGY_SLACK,
            report: EnergyReport::default(),
        })
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    /// Evaluates every probe at `state`; samples with `t <= 0` are skipped.
    pub fn observe(&mut self, state: &DualState) -> Result<()> {
        let t = state.t;
        if !(t > 0.0) {
            return Ok(());
        }
        let r_value = self.problem.reg.value(&state.x);
        let d_lambda = dual_objective_from_parts(self.problem, state, r_value);
        let res_sq = state.residual_norm * state.residual_norm;
        for (probe, fixed, hint) in self.probes.iter_mut() {
            let (mu, d_mu) = match probe {
                Probe::Zero => (WeightedVector::zeros(self.problem.op.range()), fixed.unwrap()),
                Probe::Fixed { mu, .. } => (mu.clone(), fixed.unwrap()),
                Probe::ScaledLambda(c) if *c == 1.0 => (state.lambda.clone(), d_lambda),
                Probe::ScaledLambda(c) => {
                    let mu = state.lambda.scaled(*c);
                    let d = dual_objective_hinted(self.problem, &mu, hint)?;
                    (mu, d)
                }
            };
            let lhs = 0.5 * t * res_sq
                + (state.lambda.sub(&mu).norm_squared() - mu.norm_squared()) / (2.0 * t);
            let rhs = d_mu - d_lambda;
            let violation = (lhs - rhs).max(0.0);
            self.report.rows.push(EnergyRow {
                t,
                mu_id: probe.id(),
                lhs,
                rhs,
                violation,
                flagged: violation > self.slack * (1.0 + t),
            });
        }
        Ok(())
    }

    pub fn report(&self) -> &EnergyReport {
        &self.report
    }

    pub fn into_report(self) -> EnergyReport {
        self.report
    }
}

/// Checks the energy inequality on stored states for every probe.
pub fn verify_energy_inequality(
    states: &[DualState],
    problem: &Problem,
    probes: Vec<Probe>,
) -> Result<EnergyReport> {
    let mut monitor = EnergyMonitor::new(problem, probes)?;
    for s in states {
        monitor.observe(s)?;
    }
    Ok(monitor.into_report())
}
