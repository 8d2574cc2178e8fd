mod common;

use approx::assert_relative_eq;
use ndarray::array;
use proptest::prelude::*;

use dualflow::diagnostics::{
    bregman_error, dual_objective, fit_rate, relative_error, semi_convergence_summary,
    verify_energy_inequality, write_trace_csv, EnergyMonitor, Probe, TraceRecord,
};
use dualflow::flow::{flow_init, integrate, Control, IntegrateConfig, Scheme};
use dualflow::operator::{ForwardOperator, WeightedVector};
use dualflow::problems::{gaussian_deconvolution_fixture, ErrorNorm, Problem};
use dualflow::regularizer::Regularizer;
use dualflow::rules::{check_noise_condition, dp_stop, DpConfig};

fn scalar() -> Problem {
    Problem::new(
        ForwardOperator::dense(array![[1.0]]),
        Regularizer::quadratic(1.0).unwrap(),
        WeightedVector::unit(array![1.0]),
        0.0,
    )
    .unwrap()
}

fn keep_all(dt: f64, t_max: f64) -> IntegrateConfig {
    IntegrateConfig::new(Scheme::Rk4, dt).with_t_max(t_max).with_keep_states(Some(1))
}

#[test]
fn dual_objective_at_zero() {
    let p = gaussian_deconvolution_fixture(101, 1e-2, 0).unwrap();
    let d = dual_objective(&p, &WeightedVector::zeros(p.op.range())).unwrap();
    assert!(d.abs() < 1e-12);
    assert_eq!(dual_objective(&scalar(), &WeightedVector::unit(array![0.0])).unwrap(), 0.0);
}

#[test]
fn dual_objective_scalar_closed_form_and_descent() {
    let p = scalar();
    let traj = integrate(&p, &keep_all(0.01, 3.0), |_, _| Ok(Control::Continue)).unwrap();
    for r in &traj.records {
        let e = 1.0 - (-r.t).exp();
        assert!((r.dual_objective - (0.5 * e * e - e)).abs() < 1e-9);
    }
    let d: Vec<f64> = traj.records.iter().map(|r| r.dual_objective).collect();
    assert!(common::largest_increase(&d) <= 1e-12);
}

#[test]
fn energy_inequality_scalar_closed_form() {
    let p = scalar();
    let traj = integrate(&p, &keep_all(0.01, 3.0), |_, _| Ok(Control::Continue)).unwrap();
    let rep = verify_energy_inequality(&traj.states, &p, vec![Probe::Zero]).unwrap();
    // t = 0 is skipped
    assert_eq!(rep.rows.len(), traj.states.len() - 1);
    assert_eq!(rep.flagged(), 0);
    for row in &rep.rows {
        let e = 1.0 - (-row.t).exp();
        let lhs = 0.5 * row.t * (1.0 - e) * (1.0 - e) + e * e / (2.0 * row.t);
        assert!((row.lhs - lhs).abs() < 1e-9);
        assert!((row.rhs + (0.5 * e * e - e)).abs() < 1e-9);
    }
}

#[test]
fn energy_inequality_on_deconvolution_with_probes() {
    let p = gaussian_deconvolution_fixture(201, 1e-2, 2).unwrap();
    let mut r = common::rng(5);
    let mu = p.data.with_values(common::random_vector(201, -1.0, 1.0, &mut r)).unwrap();
    let probes = vec![
        Probe::Zero,
        Probe::ScaledLambda(1.0),
        Probe::ScaledLambda(2.0),
        Probe::Fixed { id: "random".into(), mu },
    ];
    let mut monitor = EnergyMonitor::new(&p, probes).unwrap();
    let cfg = IntegrateConfig::new(Scheme::Rk4, 0.4).with_max_steps(300).with_keep_states(None);
    integrate(&p, &cfg, |s, _| {
        monitor.observe(s)?;
        Ok(Control::Continue)
    })
    .unwrap();
    let rep = monitor.into_report();
    assert_eq!(rep.rows.len(), 300 * 4);
    assert_eq!(rep.flagged(), 0, "max excess {}", rep.max_violation());
    let ids: Vec<&str> = rep.rows[..4].iter().map(|r| r.mu_id.as_str()).collect();
    assert_eq!(ids, ["zero", "lambda", "2*lambda", "random"]);
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("t,mu_id,lhs,rhs,violation\n"));
}

#[test]
fn relative_error_identities() {
    let truth = WeightedVector::unit(array![1.0, -2.0, 0.5]);
    for norm in [ErrorNorm::L1, ErrorNorm::L2] {
        assert_eq!(relative_error(&truth, &truth, norm).unwrap(), 0.0);
        assert_relative_eq!(relative_error(&truth.scaled(2.0), &truth, norm).unwrap(), 1.0);
    }
    assert!(relative_error(&truth, &truth.scaled(0.0), ErrorNorm::L2).is_err());
}

#[test]
fn bregman_error_quadratic_identity() {
    let truth = WeightedVector::unit(array![1.0, 2.0]);
    let p = Problem::new(
        ForwardOperator::dense(array![[1.0, 0.0], [0.0, 1.0]]),
        Regularizer::quadratic(1.0).unwrap(),
        truth.clone(),
        0.0,
    )
    .unwrap()
    .with_truth(truth.clone())
    .unwrap();
    let traj = integrate(&p, &keep_all(0.1, 1.0), |_, _| Ok(Control::Continue)).unwrap();
    let s = &traj.final_state;
    assert_relative_eq!(
        bregman_error(&p, s).unwrap(),
        0.5 * truth.sub(&s.x).norm_squared(),
        epsilon = 1e-12
    );
    let mut at_truth = flow_init(&p).unwrap();
    at_truth.x = truth.clone();
    at_truth.xi = truth;
    assert!(bregman_error(&p, &at_truth).unwrap().abs() < 1e-15);
}

#[test]
fn bregman_error_shrinks_with_noise_at_dp() {
    let mut prev = f64::INFINITY;
    for delta in [1e-1, 1e-2, 1e-3] {
        let p = gaussian_deconvolution_fixture(201, delta, 0).unwrap();
        let cfg = IntegrateConfig::new(Scheme::Rk4, 0.4).with_t_max(1e4).with_keep_states(None);
        let out = dp_stop(&p, DpConfig::new(1.1), &cfg).unwrap();
        let d = bregman_error(&p, &out.state).unwrap();
        assert!(d < prev, "delta {delta}: {d} !< {prev}");
        prev = d;
    }
}

#[test]
fn semi_convergence_and_noise_floor_on_deconvolution() {
    let p = gaussian_deconvolution_fixture(801, 1e-2, 0).unwrap();
    let cfg = IntegrateConfig::new(Scheme::Rk4, 0.4).with_t_max(2000.0).with_keep_states(None);
    let traj = integrate(&p, &cfg, |_, _| Ok(Control::Continue)).unwrap();
    let kappa = check_noise_condition(&traj.records, p.delta).unwrap();
    assert!(kappa >= 0.5, "kappa {kappa}");
    let sc = semi_convergence_summary(&traj.records).unwrap();
    assert!(sc.is_interior, "t_opt {}", sc.t_opt);
    let dp = dp_stop(&p, DpConfig::new(1.1), &cfg).unwrap();
    assert!(sc.re_min <= dp.relative_error.unwrap());
}

#[test]
fn semi_convergence_monotone_trace_is_not_interior() {
    let records: Vec<TraceRecord> = (0..10)
        .map(|k| TraceRecord {
            t: k as f64,
            residual_norm: 1.0,
            r_value: 0.0,
            relative_error: Some(1.0 / (1.0 + k as f64)),
            dual_objective: 0.0,
            theta: 0.0,
        })
        .collect();
    let sc = semi_convergence_summary(&records).unwrap();
    assert!(!sc.is_interior);
    assert_eq!(sc.t_opt, 9.0);
}

#[test]
fn published_dp_column_slope() {
    let pairs = [(1e-1, 1.1514e-1), (1e-2, 3.2177e-2), (1e-3, 1.2145e-2), (1e-4, 5.0245e-3)];
    let fit = fit_rate(&pairs).unwrap();
    assert!((fit.slope - 0.45).abs() < 0.02, "slope {}", fit.slope);
}

#[test]
fn trace_csv_layout() {
    let p = scalar();
    let traj = integrate(&p, &keep_all(0.5, 1.0), |_, _| Ok(Control::Continue)).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&traj.records, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,residual_norm,R_value,relative_error,dual_objective,theta");
    assert_eq!(lines.count(), traj.records.len());
}

proptest! {
    #[test]
    fn planted_power_laws(c in 0.1f64..10.0, q in 0.1f64..2.0) {
        let pairs: Vec<(f64, f64)> = [1e-1f64, 1e-2, 1e-3, 1e-4].iter().map(|d| (*d, c * d.powf(q))).collect();
        let fit = fit_rate(&pairs).unwrap();
        prop_assert!((fit.slope - q).abs() < 1e-10);
        prop_assert!(fit.residual < 1e-10);
    }
}
