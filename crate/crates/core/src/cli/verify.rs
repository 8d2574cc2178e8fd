use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{verify_energy_inequality, Probe};
use crate::error::Result;
use crate::flow::{integrate_until, stability_max_step, IntegrateConfig, Scheme, Trajectory};
use crate::operator::{ForwardOperator, WeightedVector};
use crate::problems::{
    gaussian_deconvolution_fixture, perturbation_experiment, shepp_logan_fixture, BaseFunctional,
    PerturbationSetup, Problem,
};
use crate::regularizer::{
    softmax_map, tv_prox_alternating, tv_prox_fista, tv_prox_pdhg, Regularizer,
};

/// Outcome of one invariant suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl SuiteResult {
    pub fn render(&self) -> String {
        format!(
            "{} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

type Suite = fn() -> Result<(bool, String)>;

const SUITES: &[(&str, Suite)] = &[
    ("scalar-ode", scalar_ode),
    ("scheme-consistency", scheme_consistency),
    ("deconvolution-trajectory", deconvolution_trajectory),
    ("tomography-trajectory", tomography_trajectory),
    ("softmax-optimality", softmax_optimality),
    ("tv-prox-agreement", tv_prox_agreement),
    ("perturbation", perturbation),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|(n, _)| *n).collect()
}

/// Runs the suites whose name contains `filter` (all when `None`). A suite
/// that errors counts as failed.
pub fn run_suites(filter: Option<&str>) -> Vec<SuiteResult> {
    SUITES
        .iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, suite)| {
            let (pass, detail) = suite().unwrap_or_else(|e| (false, format!("error: {e}")));
            SuiteResult { name, pass, detail }
        })
        .collect()
}

fn scalar_problem() -> Result<Problem> {
    Problem::new(
        ForwardOperator::dense(Array2::from_elem((1, 1), 1.0)),
        Regularizer::quadratic(1.0)?,
        WeightedVector::unit(Array1::from(vec![1.0])),
        0.0,
    )
}

fn run_to(problem: &Problem, scheme: Scheme, dt: f64, t: f64) -> Result<Trajectory> {
    let cfg = IntegrateConfig::new(scheme, dt)
        .with_t_max(t)
        .with_keep_states(Some(1));
    integrate_until(problem, &cfg, |_| false)
}

fn scalar_ode() -> Result<(bool, String)> {
    let p = scalar_problem()?;
    let exact = 1.0 - (-1.0f64).exp();
    let rk4 = (run_to(&p, Scheme::Rk4, 0.01, 1.0)?.final_state.x.values()[0] - exact).abs();
    let euler = (run_to(&p, Scheme::Euler, 0.01, 1.0)?.final_state.x.values()[0] - exact).abs();
    Ok((
        rk4 <= 1e-9 && euler >= 1e-4,
        format!("rk4 error {rk4:.2e}, euler error {euler:.2e}"),
    ))
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn scheme_consistency() -> Result<(bool, String)> {
    let op = ForwardOperator::dense(random_matrix(8, 6, 11));
    let y = op.apply(&WeightedVector::unit(Array1::ones(6)))?;
    let p = Problem::new(op, Regularizer::quadratic(1.0)?, y, 0.0)?;
    let h = 0.5 * stability_max_step(&p.op, &p.reg);
    let x = |dt: f64| -> Result<WeightedVector> { Ok(run_to(&p, Scheme::Rk4, dt, 2.0)?.final_state.x) };
    let (x1, x2, x4) = (x(h)?, x(h / 2.0)?, x(h / 4.0)?);
    let ratio = x1.sub(&x2).norm() / x2.sub(&x4).norm();
    Ok(((10.0..=22.0).contains(&ratio), format!("self-difference ratio {ratio:.2}")))
}

/// Residual and dual-objective monotonicity plus the energy inequality.
fn check_trajectory(p: &Problem, dt: f64, steps: usize) -> Result<(bool, String)> {
    let cfg = IntegrateConfig::new(Scheme::Rk4, dt)
        .with_max_steps(steps)
        .with_keep_states(Some(1));
    let traj = integrate_until(p, &cfg, |_| false)?;
    let tol = 1e-9 * (1.0 + p.data.norm());
    let worst = |f: fn(&crate::diagnostics::TraceRecord) -> f64| {
        traj.records
            .windows(2)
            .map(|w| f(&w[1]) - f(&w[0]))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let res_up = worst(|r| r.residual_norm);
    let dual_up = worst(|r| r.dual_objective);
    let probes = vec![Probe::Zero, Probe::ScaledLambda(1.0), Probe::ScaledLambda(2.0)];
    let energy = verify_energy_inequality(&traj.states, p, probes)?;
    let pass = res_up <= tol && dual_up <= tol && energy.flagged() == 0;
    Ok((
        pass,
        format!(
            "{} steps, max residual increase {res_up:.2e}, max dual increase {dual_up:.2e}, \
             energy violations {}",
            traj.steps,
            energy.flagged()
        ),
    ))
}

fn deconvolution_trajectory() -> Result<(bool, String)> {
    let p = gaussian_deconvolution_fixture(201, 1e-2, 0)?;
    check_trajectory(&p, 0.4, 100)
}

fn tomography_trajectory() -> Result<(bool, String)> {
    let p = shepp_logan_fixture(16, 10, 23, 1e-2, 0)?;
    let dt = 0.9 * stability_max_step(&p.op, &p.reg);
    check_trajectory(&p, dt, 60)
}

fn softmax_optimality() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let xi = WeightedVector::unit(Array1::from_shape_fn(5, |_| rng.random_range(-3.0..3.0)));
        let x = softmax_map(&xi);
        // stationarity on the simplex: ln x - xi is constant
        let g: Vec<f64> = x.values().iter().zip(xi.values()).map(|(a, b)| a.ln() - b).collect();
        let spread = g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - g.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(spread).max((x.integral() - 1.0).abs());
    }
    Ok((worst <= 1e-10, format!("worst stationarity defect {worst:.2e}")))
}

fn tv_prox_agreement() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let v = Array2::from_shape_fn((6, 7), |_| rng.random_range(-2.0..2.0));
        let a = tv_prox_alternating(&v, 0.7, 1e-12, 100_000, None)?.image;
        let b = tv_prox_fista(&v, 0.7, 1e-12, 100_000, None)?.image;
        let c = tv_prox_pdhg(&v, 0.7, 1e-12, 200_000, None)?.image;
        for (x, y) in [(&a, &b), (&a, &c)] {
            let d = (x - y).iter().fold(0.0f64, |m, e| m.max(e.abs()));
            worst = worst.max(d);
        }
    }
    Ok((worst <= 1e-5, format!("largest disagreement {worst:.2e}")))
}

fn perturbation() -> Result<(bool, String)> {
    let op = ForwardOperator::dense(Array2::from_elem((1, 2), 1.0));
    let y = WeightedVector::unit(Array1::from(vec![2.0]));
    let setup = PerturbationSetup {
        base: BaseFunctional { l1: 1.0, quadratic: 0.0 },
        alphas: vec![1.0, 0.1, 0.01],
        reference: Some(WeightedVector::unit(Array1::from(vec![1.0, 1.0]))),
    };
    let rep = perturbation_experiment(&setup, &op, &y)?;
    let worst = rep.rows.iter().map(|r| r.distance).fold(0.0, f64::max);
    let psi_ok = rep.rows.iter().all(|r| r.psi_value <= rep.reference_psi + 1e-6);
    Ok((
        !rep.partial && worst <= 1e-6 && psi_ok,
        format!("largest distance to (1, 1): {worst:.2e}"),
    ))
}
