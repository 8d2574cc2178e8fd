//! Stopping rules over a flow trajectory: the a priori rule
//! `t = c_scale * omega * delta^(q-2)`, the discrepancy principle (first time
//! the residual reaches `tau * delta`), and the heuristic discrepancy
//! principle (minimize `(t + a) ||A x(t) - y^delta||^2` over samples).
//!
//! All rules can be driven from a single integration with [`run_rules`].

use serde::{Deserialize, Serialize};

use crate::diagnostics::TraceRecord;
use crate::error::{Error, Result};
use crate::flow::{integrate, step, Control, DualState, IntegrateConfig, Trajectory};
use crate::problems::Problem;

/// Relative half-width of the band the refined discrepancy crossing must hit.
pub const DP_CROSSING_TOL: f64 = 1e-3;
const DP_MAX_BISECTIONS: usize = 100;
/// Default number of non-improving samples before the heuristic rule gives up.
pub const HDP_STALL_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Apriori,
    Dp,
    Hdp,
    /// The rule could not stop within the time or step budget.
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub tau: f64,
    /// Noise level; `None` uses the problem's.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdpConfig {
    pub a: f64,
    #[serde(default = "default_stall_window")]
    pub stall_window: usize,
}

fn default_stall_window() -> usize {
    HDP_STALL_WINDOW
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AprioriConfig {
    pub omega: f64,
    pub q: f64,
    #[serde(default = "one")]
    pub c_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl DpConfig {
    pub fn new(tau: f64) -> Self {
        Self { tau, delta: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must exceed 1, got {}", self.tau)));
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {d}")));
            }
        }
        Ok(())
    }
}

impl HdpConfig {
    pub fn new(a: f64) -> Self {
        Self {
            a,
            stall_window: HDP_STALL_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!("a must be positive, got {}", self.a)));
        }
        if self.stall_window == 0 {
            return Err(Error::InvalidParameter("stall window must be positive".into()));
        }
        Ok(())
    }
}

impl AprioriConfig {
    pub fn new(omega: f64, q: f64) -> Self {
        Self {
            omega,
            q,
            c_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidParameter(format!("q must lie in (0, 1], got {}", self.q)));
        }
        if !(self.c_scale > 0.0 && self.c_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "c_scale must be positive, got {}",
                self.c_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Rule {
    Apriori(AprioriConfig),
    Dp(DpConfig),
    Hdp(HdpConfig),
}

impl Rule {
    pub fn kind(&self) -> RuleKind {
        match self {
            Self::Apriori(_) => RuleKind::Apriori,
            Self::Dp(_) => RuleKind::Dp,
            Self::Hdp(_) => RuleKind::Hdp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Apriori(c) => c.validate(),
            Self::Dp(c) => c.validate(),
            Self::Hdp(c) => c.validate(),
        }
    }

    /// Short column label, e.g. `dp(tau=1.1)`.
    pub fn label(&self) -> String {
        match self {
            Self::Apriori(c) => format!("apriori(omega={},q={},c={})", c.omega, c.q, c.c_scale),
            Self::Dp(c) => format!("dp(tau={})", c.tau),
            Self::Hdp(c) => format!("hdp(a={})", c.a),
        }
    }
}

/// `t = c_scale * omega * delta^(q - 2)`.
pub fn apriori_stop_time(delta: f64, omega: f64, q: f64, c_scale: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("noise level must be positive, got {delta}")));
    }
    Ok(c_scale * omega * delta.powf(q - 2.0))
}

#[derive(Debug, Clone)]
pub struct StopOutcome {
    pub rule: Rule,
    /// Rule kind, or [`RuleKind::Budget`] if the rule did not fire.
    pub kind: RuleKind,
    pub t_stop: f64,
    pub state: DualState,
    /// Residual norm at `t_stop`.
    pub delta_star: f64,
    /// Sample times bracketing the discrepancy crossing.
    pub bracket: Option<(f64, f64)>,
    /// `(t, Theta(t))` for every sample seen by the heuristic rule.
    pub theta_history: Vec<(f64, f64)>,
    pub theta_min: Option<f64>,
    /// Smallest residual seen up to the stop, divided by the noise level.
    pub kappa_hat: Option<f64>,
    pub relative_error: Option<f64>,
}

/// JSON form of a [`StopOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub rule: RuleKind,
    pub label: String,
    pub t_stop: f64,
    pub delta_star: f64,
    pub re: Option<f64>,
    pub theta_min: Option<f64>,
    pub kappa_hat: Option<f64>,
}

impl StopOutcome {
    pub fn summary(&self) -> OutcomeSummary {
        OutcomeSummary {
            rule: self.kind,
            label: self.rule.label(),
            t_stop: self.t_stop,
            delta_star: self.delta_star,
            re: self.relative_error,
            theta_min: self.theta_min,
            kappa_hat: self.kappa_hat,
        }
    }
}

/// Smallest residual over the samples divided by `delta`.
pub fn check_noise_condition(records: &[TraceRecord], delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("noise level must be positive, got {delta}")));
    }
    records
        .iter()
        .map(|r| r.residual_norm)
        .reduce(f64::min)
        .map(|m| m / delta)
        .ok_or_else(|| Error::InvalidParameter("empty trajectory".into()))
}

enum Tracker {
    Apriori {
        t_target: f64,
        prev: Option<DualState>,
    },
    Dp {
        threshold: f64,
        prev: Option<DualState>,
    },
    Hdp {
        cfg: HdpConfig,
        history: Vec<(f64, f64)>,
        best: Option<(f64, DualState)>,
        since_best: usize,
    },
}

struct Slot {
    rule: Rule,
    tracker: Tracker,
    delta: f64,
    min_residual: f64,
    result: Option<StopOutcome>,
}

impl Slot {
    fn new(problem: &Problem, rule: Rule) -> Result<Self> {
        rule.validate()?;
        let (tracker, delta) = match rule {
            Rule::Apriori(c) => (
                Tracker::Apriori {
                    t_target: apriori_stop_time(problem.delta, c.omega, c.q, c.c_scale)?,
                    prev: None,
                },
                problem.delta,
            ),
            Rule::Dp(c) => {
                let delta = c.delta.unwrap_or(problem.delta);
                (
                    Tracker::Dp {
                        threshold: c.tau * delta,
                        prev: None,
                    },
                    delta,
                )
            }
            Rule::Hdp(cfg) => (
                Tracker::Hdp {
                    cfg,
                    history: Vec::new(),
                    best: None,
                    since_best: 0,
                },
                problem.delta,
            ),
        };
        Ok(Self {
            rule,
            tracker,
            delta,
            min_residual: f64::INFINITY,
            result: None,
        })
    }

    fn finish(&mut self, problem: &Problem, kind: RuleKind, state: DualState, bracket: Option<(f64, f64)>) {
        self.min_residual = self.min_residual.min(state.residual_norm);
        let (theta_history, theta_min) = match &mut self.tracker {
            Tracker::Hdp { history, best, .. } => {
                (std::mem::take(history), best.as_ref().map(|b| b.0))
            }
            _ => (Vec::new(), None),
        };
        self.result = Some(StopOutcome {
            rule: self.rule,
            kind,
            t_stop: state.t,
            delta_star: state.residual_norm,
            bracket,
            theta_history,
            theta_min,
            kappa_hat: (self.delta > 0.0).then(|| self.min_residual / self.delta),
            relative_error: problem.relative_error(&state.x),
            state,
        });
    }

    fn observe(&mut self, problem: &Problem, cfg: &IntegrateConfig, state: &DualState) -> Result<()> {
        if self.result.is_some() {
            return Ok(());
        }
        match &mut self.tracker {
            Tracker::Apriori { t_target, prev } => {
                let target = *t_target;
                if state.t >= target {
                    let landed = match prev.take() {
                        Some(p) if state.t > target && target > p.t => {
                            let mut s = step(problem, &p, target - p.t, cfg.scheme)?;
                            s.t = target;
                            s
                        }
                        _ => state.clone(),
                    };
                    self.finish(problem, RuleKind::Apriori, landed, None);
                    return Ok(());
                }
                *prev = Some(state.clone());
            }
            Tracker::Dp { threshold, prev } => {
                let threshold = *threshold;
                if state.residual_norm <= threshold {
                    let (landed, bracket) = match prev.take() {
                        None => (state.clone(), None),
                        Some(p) => {
                            let bracket = Some((p.t, state.t));
                            (refine_crossing(problem, cfg, &p, state, threshold)?, bracket)
                        }
                    };
                    self.finish(problem, RuleKind::Dp, landed, bracket);
                    return Ok(());
                }
                *prev = Some(state.clone());
            }
            Tracker::Hdp {
                cfg: hcfg,
                history,
                best,
                since_best,
            } => {
                let theta = (state.t + hcfg.a) * state.residual_norm * state.residual_norm;
                history.push((state.t, theta));
                match best {
                    Some((b, _)) if theta >= *b => *since_best += 1,
                    _ => {
                        *best = Some((theta, state.clone()));
                        *since_best = 0;
                    }
                }
                let t_best = best.as_ref().map_or(0.0, |b| b.1.t);
                if *since_best >= hcfg.stall_window && state.t >= 10.0 * t_best {
                    let s = best.as_ref().expect("best sample").1.clone();
                    self.min_residual = self.min_residual.min(state.residual_norm);
                    self.finish(problem, RuleKind::Hdp, s, None);
                    return Ok(());
                }
            }
        }
        self.min_residual = self.min_residual.min(state.residual_norm);
        Ok(())
    }

    /// Closes a rule still open when the integration budget ran out.
    fn close(&mut self, problem: &Problem, last: &DualState) {
        if self.result.is_some() {
            return;
        }
        match &self.tracker {
            Tracker::Hdp { best, .. } => {
                let s = best.as_ref().map_or_else(|| last.clone(), |b| b.1.clone());
                // a minimizer on the final sample means Theta was still decreasing
                let kind = if s.t >= last.t { RuleKind::Budget } else { RuleKind::Hdp };
                self.finish(problem, kind, s, None);
            }
            _ => self.finish(problem, RuleKind::Budget, last.clone(), None),
        }
    }
}

/// Bisects the sub-step from `prev` until the residual lies within
/// `threshold * (1 +- DP_CROSSING_TOL)`. Each candidate is an exact step of
/// the scheme, so the result is a genuine flow sample.
fn refine_crossing(
    problem: &Problem,
    cfg: &IntegrateConfig,
    prev: &DualState,
    cur: &DualState,
    threshold: f64,
) -> Result<DualState> {
    let lo_band = threshold * (1.0 - DP_CROSSING_TOL);
    let hi_band = threshold * (1.0 + DP_CROSSING_TOL);
    if cur.residual_norm >= lo_band {
        return Ok(cur.clone());
    }
    let (mut lo, mut hi) = (0.0, cur.t - prev.t);
    let mut best = cur.clone();
    for _ in 0..DP_MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let s = step(problem, prev, mid, cfg.scheme)?;
        if s.residual_norm > hi_band {
            lo = mid;
        } else if s.residual_norm < lo_band {
            hi = mid;
            best = s;
        } else {
            return Ok(s);
        }
    }
    Ok(best)
}

/// Runs every rule on one integration of the flow. The integration stops
/// once all rules have fired or the budget in `cfg` is exhausted.
pub fn run_rules(
    problem: &Problem,
    rules: &[Rule],
    cfg: &IntegrateConfig,
) -> Result<(Vec<StopOutcome>, Trajectory)> {
    if rules.is_empty() {
        return Err(Error::InvalidParameter("no stopping rule given".into()));
    }
    let mut slots = rules
        .iter()
        .map(|r| Slot::new(problem, *r))
        .collect::<Result<Vec<_>>>()?;
    let traj = integrate(problem, cfg, |state, _| {
        for slot in slots.iter_mut() {
            slot.observe(problem, cfg, state)?;
        }
        Ok(if slots.iter().all(|s| s.result.is_some()) {
            Control::Stop
        } else {
            Control::Continue
        })
    })?;
    for slot in slots.iter_mut() {
        slot.close(problem, &traj.final_state);
    }
    let outcomes = slots
        .into_iter()
        .map(|s| s.result.expect("every rule closed"))
        .collect();
    Ok((outcomes, traj))
}

fn run_single(problem: &Problem, rule: Rule, cfg: &IntegrateConfig) -> Result<StopOutcome> {
    let (mut outcomes, _) = run_rules(problem, &[rule], cfg)?;
    Ok(outcomes.pop().expect("one rule"))
}

/// Discrepancy principle with `delta` from `dp`, or the problem's.
pub fn dp_stop(problem: &Problem, dp: DpConfig, cfg: &IntegrateConfig) -> Result<StopOutcome> {
    run_single(problem, Rule::Dp(dp), cfg)
}

/// Heuristic discrepancy principle over `[0, cfg.t_max]`.
pub fn hdp_stop(problem: &Problem, hdp: HdpConfig, cfg: &IntegrateConfig) -> Result<StopOutcome> {
    run_single(problem, Rule::Hdp(hdp), cfg)
}

/// A priori rule `t = c_scale * omega * delta^(q-2)`.
pub fn apriori_stop(problem: &Problem, ap: AprioriConfig, cfg: &IntegrateConfig) -> Result<StopOutcome> {
    run_single(problem, Rule::Apriori(ap), cfg)
}
