//! Time integration of the dual gradient flow
//!
//! ```text
//! x(t)      = grad R*(A* lambda(t))
//! lambda'(t) = y^delta - A x(t),      lambda(0) = 0
//! ```
//!
//! by the explicit Euler scheme or the classical four-stage Runge-Kutta scheme.

use serde::{Deserialize, Serialize};

use crate::diagnostics::TraceRecord;
use crate::error::{Error, Result};
use crate::operator::{ForwardOperator, WeightedVector};
use crate::problems::Problem;
use crate::regularizer::{InnerHint, Regularizer};

/// Butcher tableau of an explicit Runge-Kutta scheme with four stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk4Tableau {
    /// Strictly lower-triangular stage coefficients.
    pub gamma: [[f64; 4]; 4],
    pub b: [f64; 4],
}

/// The classical fourth-order method.
pub const RK4: Rk4Tableau = Rk4Tableau {
    gamma: [
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ],
    b: [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::Parse(format!("unknown scheme {other:?}"))),
        }
    }
}

/// One sample of the flow. `x` and `residual` are always recomputed from
/// `lambda`, never extrapolated.
#[derive(Debug, Clone)]
pub struct DualState {
    pub t: f64,
    pub lambda: WeightedVector,
    /// `A* lambda`.
    pub xi: WeightedVector,
    pub x: WeightedVector,
    /// `A x - y^delta`.
    pub residual: WeightedVector,
    pub residual_norm: f64,
    pub(crate) hint: Option<InnerHint>,
}

/// Builds the state attached to `lambda` at time `t`.
pub fn state_at(
    problem: &Problem,
    t: f64,
    lambda: WeightedVector,
    hint: Option<&InnerHint>,
) -> Result<DualState> {
    let xi = problem.op.adjoint_apply(&lambda)?;
    let (x, hint) = problem.reg.conj_grad_hinted(&xi, hint)?;
    let residual = problem.op.apply(&x)?.sub(&problem.data);
    let residual_norm = residual.norm();
    Ok(DualState {
        t,
        lambda,
        xi,
        x,
        residual,
        residual_norm,
        hint,
    })
}

/// `Phi(lambda) = y^delta - A grad R*(A* lambda)`.
pub fn rhs(problem: &Problem, lambda: &WeightedVector) -> Result<WeightedVector> {
    let xi = problem.op.adjoint_apply(lambda)?;
    let x = problem.reg.conj_grad(&xi)?;
    Ok(problem.data.sub(&problem.op.apply(&x)?))
}

/// State at `t = 0` with `lambda = 0`.
pub fn flow_init(problem: &Problem) -> Result<DualState> {
    state_at(problem, 0.0, WeightedVector::zeros(problem.op.range()), None)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("step size must be positive, got {dt}")))
    }
}

/// `lambda+ = lambda + dt (y^delta - A x)`.
pub fn euler_step(problem: &Problem, state: &DualState, dt: f64) -> Result<DualState> {
    check_dt(dt)?;
    let lambda = state.lambda.add_scaled(-dt, &state.residual);
    state_at(problem, state.t + dt, lambda, state.hint.as_ref())
}

/// One step of the explicit Runge-Kutta scheme with tableau [`RK4`].
pub fn rk4_step(problem: &Problem, state: &DualState, dt: f64) -> Result<DualState> {
    rk_step(problem, state, dt, &RK4)
}

/// One step of a four-stage explicit scheme given by `tableau`.
pub fn rk_step(
    problem: &Problem,
    state: &DualState,
    dt: f64,
    tableau: &Rk4Tableau,
) -> Result<DualState> {
    check_dt(dt)?;
    // slopes g_i = y^delta - A k_i; the first stage reuses the cached x
    let mut slopes: Vec<WeightedVector> = Vec::with_capacity(4);
    slopes.push(state.residual.scaled(-1.0));
    let mut hint = state.hint.clone();
    for i in 1..4 {
        let mut omega = state.lambda.clone();
        for (j, g) in slopes.iter().enumerate() {
            let c = tableau.gamma[i][j];
            if c != 0.0 {
                omega = omega.add_scaled(dt * c, g);
            }
        }
        let xi = problem.op.adjoint_apply(&omega)?;
        let (k, h) = problem.reg.conj_grad_hinted(&xi, hint.as_ref())?;
        hint = h;
        slopes.push(problem.data.sub(&problem.op.apply(&k)?));
    }
    let mut lambda = state.lambda.clone();
    for (b, g) in tableau.b.iter().zip(&slopes) {
        lambda = lambda.add_scaled(dt * b, g);
    }
    state_at(problem, state.t + dt, lambda, hint.as_ref())
}

pub fn step(problem: &Problem, state: &DualState, dt: f64, scheme: Scheme) -> Result<DualState> {
    match scheme {
        Scheme::Euler => euler_step(problem, state, dt),
        Scheme::Rk4 => rk4_step(problem, state, dt),
    }
}

/// Largest step keeping the Euler residual monotone: `4 c0 / ||A||^2`, with
/// `||A||` measured in the norm where `c0` holds. `+inf` for a zero operator.
pub fn stability_max_step(op: &ForwardOperator, reg: &Regularizer) -> f64 {
    max_step_for(op.norm(reg.primal_norm()), reg.modulus())
}

pub fn max_step_for(op_norm: f64, modulus: f64) -> f64 {
    if op_norm == 0.0 {
        f64::INFINITY
    } else {
        4.0 * modulus / (op_norm * op_norm)
    }
}

/// Lipschitz constant `||A||^2 / (2 c0)` of the flow's right-hand side.
pub fn lipschitz_constant(op: &ForwardOperator, reg: &Regularizer) -> f64 {
    let n = op.norm(reg.primal_norm());
    n * n / (2.0 * reg.modulus())
}

/// Default step: 90% of the stability bound, or the preset step if one is set.
pub fn default_dt(problem: &Problem) -> f64 {
    problem
        .preset_dt
        .unwrap_or_else(|| 0.9 * stability_max_step(&problem.op, &problem.reg))
}

/// Integration settings.
#[derive(Debug, Clone)]
pub struct IntegrateConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Time budget; the last step is shortened to land on it exactly.
    pub t_max: f64,
    /// Hard cap on the number of steps.
    pub max_steps: Option<usize>,
    /// Keep a trace record every `record_every` steps (the final state is
    /// always recorded).
    pub record_every: usize,
    /// Keep full states every `n` steps; `None` keeps only the final state.
    pub keep_states: Option<usize>,
    /// `a` in the theta column `(t + a) ||A x - y^delta||^2`.
    pub theta_a: f64,
}

impl IntegrateConfig {
    pub fn new(scheme: Scheme, dt: f64) -> Self {
        Self {
            scheme,
            dt,
            t_max: f64::INFINITY,
            max_steps: None,
            record_every: 1,
            keep_states: Some(1),
            theta_a: 0.1,
        }
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_max_steps(mut self, n: usize) -> Self {
        self.max_steps = Some(n);
        self
    }

    pub fn with_keep_states(mut self, stride: Option<usize>) -> Self {
        self.keep_states = stride;
        self
    }

    pub fn with_record_every(mut self, n: usize) -> Self {
        self.record_every = n.max(1);
        self
    }

    pub fn with_theta_a(mut self, a: f64) -> Self {
        self.theta_a = a;
        self
    }

    fn validate(&self) -> Result<()> {
        check_dt(self.dt)?;
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time budget must be positive, got {}",
                self.t_max
            )));
        }
        if self.t_max.is_infinite() && self.max_steps.is_none() {
            return Err(Error::InvalidParameter(
                "an unbounded run needs max_steps".into(),
            ));
        }
        Ok(())
    }
}

/// Observer verdict after each sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The observer asked to stop.
    Predicate,
    /// `t_max` or `max_steps` was reached first.
    BudgetExhausted,
}

/// Samples of one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TraceRecord>,
    pub states: Vec<DualState>,
    pub final_state: DualState,
    pub stop_reason: StopReason,
    pub steps: usize,
}

/// Integrates from `lambda(0) = 0`. `observe` sees every state, starting
/// with the initial one, and may stop the run.
pub fn integrate<F>(problem: &Problem, cfg: &IntegrateConfig, observe: F) -> Result<Trajectory>
where
    F: FnMut(&DualState, &TraceRecord) -> Result<Control>,
{
    integrate_from(problem, cfg, flow_init(problem)?, observe)
}

/// As [`integrate`], starting from a given state.
pub fn integrate_from<F>(
    problem: &Problem,
    cfg: &IntegrateConfig,
    start: DualState,
    mut observe: F,
) -> Result<Trajectory>
where
    F: FnMut(&DualState, &TraceRecord) -> Result<Control>,
{
    cfg.validate()?;
    let mut state = start;
    let mut records = Vec::new();
    let mut states = Vec::new();
    let mut steps = 0usize;
    loop {
        let rec = TraceRecord::from_state(problem, &state, cfg.theta_a);
        let verdict = observe(&state, &rec)?;
        let at_budget = state.t >= cfg.t_max || cfg.max_steps.is_some_and(|m| steps >= m);
        let done = verdict == Control::Stop || at_budget;
        if steps.is_multiple_of(cfg.record_every) || done {
            records.push(rec);
        }
        if let Some(stride) = cfg.keep_states {
            if steps.is_multiple_of(stride.max(1)) || done {
                states.push(state.clone());
            }
        }
        if done {
            let stop_reason = if verdict == Control::Stop {
                StopReason::Predicate
            } else {
                StopReason::BudgetExhausted
            };
            return Ok(Trajectory {
                records,
                states,
                final_state: state,
                stop_reason,
                steps,
            });
        }
        let remaining = cfg.t_max - state.t;
        let (dt, land) = if remaining <= cfg.dt * (1.0 + 1e-9) {
            (remaining, true)
        } else {
            (cfg.dt, false)
        };
        state = step(problem, &state, dt, cfg.scheme)?;
        if land {
            state.t = cfg.t_max;
        }
        steps += 1;
    }
}

/// Integrates until `stop` holds or the budget runs out.
pub fn integrate_until(
    problem: &Problem,
    cfg: &IntegrateConfig,
    mut stop: impl FnMut(&DualState) -> bool,
) -> Result<Trajectory> {
    integrate(problem, cfg, |s, _| {
        Ok(if stop(s) { Control::Stop } else { Control::Continue })
    })
}
