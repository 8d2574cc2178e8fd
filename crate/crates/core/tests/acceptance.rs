//! Acceptance suite: every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line. Run with
//! `cargo test -p dualflow --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};

use dualflow::cli::{run_experiment, ExperimentConfig, Preset};
use dualflow::diagnostics::{fit_rate, EnergyMonitor, EnergyReport, Probe};
use dualflow::flow::{
    integrate, lipschitz_constant, stability_max_step, Control, IntegrateConfig, Scheme,
};
use dualflow::operator::{ForwardOperator, WeightedVector};
use dualflow::problems::{
    gaussian_deconvolution_fixture, perturbation_experiment, shepp_logan_fixture, BaseFunctional,
    PerturbationSetup, Problem, DECONVOLUTION_DT, TOMOGRAPHY_DESK, TOMOGRAPHY_DT,
};
use dualflow::regularizer::{softmax_map, tv_prox_pdhg, Regularizer};
use dualflow::rules::{check_noise_condition, run_rules, DpConfig, HdpConfig, Rule, RuleKind};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Runs one criterion, prints its line and returns whether it passed. A
/// criterion passes only if its check holds within the runtime limit.
fn criterion(id: usize, name: &str, limit_secs: f64, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let secs = start.elapsed().as_secs_f64();
    let pass = v.pass && secs < limit_secs;
    println!(
        "{} [{id:>2}] {name}: {} ({secs:.1} s, limit {limit_secs:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        v.detail
    );
    pass
}

fn monotone_tol(p: &Problem) -> f64 {
    1e-9 * (1.0 + p.data.norm())
}

fn random_probes(p: &Problem, seed: u64) -> Vec<Probe> {
    let m = p.data.len();
    let scale = p.data.norm() / (m as f64).sqrt();
    let mut r = common::rng(seed);
    [1.0, 10.0, 100.0]
        .iter()
        .enumerate()
        .map(|(k, f)| Probe::Fixed {
            id: format!("random{k}"),
            mu: p
                .data
                .with_values(common::random_vector(m, -1.0, 1.0, &mut r) * (scale * f))
                .unwrap(),
        })
        .collect()
}

/// Integrates `steps` RK4 steps at `dt`, streaming residuals and the energy
/// inequality. Returns the largest per-step residual increase and the
/// energy report.
fn monotone_run(p: &Problem, dt: f64, steps: usize, probe_seed: u64) -> (f64, usize, EnergyReport) {
    let mut probes = vec![Probe::Zero, Probe::ScaledLambda(1.0), Probe::ScaledLambda(2.0)];
    probes.extend(random_probes(p, probe_seed));
    let mut monitor = EnergyMonitor::new(p, probes).unwrap();
    let mut residuals = Vec::with_capacity(steps + 1);
    let cfg = IntegrateConfig::new(Scheme::Rk4, dt)
        .with_max_steps(steps)
        .with_keep_states(None);
    let traj = integrate(p, &cfg, |s, _| {
        residuals.push(s.residual_norm);
        monitor.observe(s)?;
        Ok(Control::Continue)
    })
    .unwrap();
    (common::largest_increase(&residuals), traj.steps, monitor.into_report())
}

/// Outcomes of the deconvolution sweep shared by criteria 4 to 6.
struct DeconvolutionCell {
    delta: f64,
    /// `(t, RE, kind)` per rule label.
    outcomes: BTreeMap<String, (f64, f64, RuleKind)>,
    kappa_hat: f64,
}

const DECONVOLUTION_LADDER: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Runs `rules` on one integration per noise level. The run ends when the
/// last rule has fired.
fn deconvolution_sweep(ladder: &[f64], rules: &[Rule]) -> Vec<DeconvolutionCell> {
    ladder
        .iter()
        .map(|&delta| {
            let p = gaussian_deconvolution_fixture(801, delta, 0).unwrap();
            let cfg = IntegrateConfig::new(Scheme::Rk4, DECONVOLUTION_DT)
                .with_t_max(1e5)
                .with_keep_states(None);
            let (outs, traj) = run_rules(&p, rules, &cfg).unwrap();
            DeconvolutionCell {
                delta,
                outcomes: outs
                    .iter()
                    .map(|o| {
                        (
                            o.rule.label(),
                            (o.t_stop, o.relative_error.unwrap(), o.kind),
                        )
                    })
                    .collect(),
                kappa_hat: check_noise_condition(&traj.records, p.delta).unwrap(),
            }
        })
        .collect()
}

fn within3(found: f64, reference: f64) -> bool {
    found >= reference / 3.0 && found <= reference * 3.0
}

fn criterion_1_and_8(reports: &mut Vec<(String, EnergyReport)>) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for delta in [1e-1, 1e-2] {
        let p = gaussian_deconvolution_fixture(801, delta, 0).unwrap();
        let (inc, steps, rep) = monotone_run(&p, DECONVOLUTION_DT, 500, 1);
        pass &= inc <= monotone_tol(&p);
        parts.push(format!("deconvolution delta={delta:e}: {steps} steps, max increase {inc:.1e}"));
        reports.push((format!("deconvolution delta={delta:e}"), rep));
    }
    let (n, angles, det) = TOMOGRAPHY_DESK;
    let p = shepp_logan_fixture(n, angles, det, 1e-2, 0).unwrap();
    let (inc, steps, rep) = monotone_run(&p, TOMOGRAPHY_DT, 200, 2);
    pass &= inc <= monotone_tol(&p);
    parts.push(format!("tomography delta_rel=1e-2: {steps} steps, max increase {inc:.1e}"));
    reports.push(("tomography delta_rel=1e-2".into(), rep));
    verdict(pass, parts.join("; "))
}

fn criterion_2() -> Verdict {
    let a = common::random_matrix(20, 15, 2024);
    let mut r = common::rng(7);
    let y = common::random_vector(20, -1.0, 1.0, &mut r);
    let op = ForwardOperator::dense(a.clone());
    let p = Problem::new(op, Regularizer::quadratic(1.0).unwrap(), WeightedVector::unit(y.clone()), 0.0)
        .unwrap();
    let dt = 0.01 / lipschitz_constant(&p.op, &p.reg);
    let cfg = IntegrateConfig::new(Scheme::Rk4, dt)
        .with_t_max(5.0)
        .with_keep_states(None)
        .with_record_every(usize::MAX);
    let traj = integrate(&p, &cfg, |_, _| Ok(Control::Continue)).unwrap();
    let exact = common::showalter_closed_form(&a, &y, 5.0);
    let x = traj.final_state.x.values();
    let rel = (x - &exact).mapv(|e| e * e).sum().sqrt() / exact.mapv(|e| e * e).sum().sqrt();
    verdict(
        rel <= 1e-6 && (traj.final_state.t - 5.0).abs() < 1e-12,
        format!("{} steps, relative error {rel:.2e}", traj.steps),
    )
}

fn scalar_x_at_one(scheme: Scheme) -> f64 {
    let p = Problem::new(
        ForwardOperator::dense(Array2::from_elem((1, 1), 1.0)),
        Regularizer::quadratic(1.0).unwrap(),
        WeightedVector::unit(Array1::from(vec![1.0])),
        0.0,
    )
    .unwrap();
    let cfg = IntegrateConfig::new(scheme, 0.01).with_t_max(1.0).with_keep_states(None);
    let traj = integrate(&p, &cfg, |_, _| Ok(Control::Continue)).unwrap();
    assert!((traj.final_state.t - 1.0).abs() < 1e-12);
    traj.final_state.x.values()[0]
}

fn criterion_3() -> Verdict {
    let exact = 1.0 - (-1.0f64).exp();
    let rk4 = (scalar_x_at_one(Scheme::Rk4) - exact).abs();
    let euler = (scalar_x_at_one(Scheme::Euler) - exact).abs();
    verdict(
        rk4 <= 1e-9 && euler >= 1e-4,
        format!("rk4 error {rk4:.2e}, euler error {euler:.2e}"),
    )
}

const PUBLISHED_DP: [(f64, f64, f64); 3] = [
    (1e-1, 13.6, 1.1514e-1),
    (1e-2, 132.8, 3.2177e-2),
    (1e-3, 1810.4, 1.2145e-2),
];

fn criterion_4(cells: &[DeconvolutionCell]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut pairs = Vec::new();
    for (cell, (delta, t_ref, re_ref)) in cells.iter().zip(PUBLISHED_DP) {
        assert_eq!(cell.delta, delta);
        let (t, re, kind) = cell.outcomes["dp(tau=1.1)"];
        pass &= kind == RuleKind::Dp && within3(t, t_ref) && within3(re, re_ref);
        parts.push(format!("delta={delta:e}: t={t:.1} RE={re:.4e}"));
        pairs.push((delta, re));
    }
    let decreasing = pairs.windows(2).all(|w| w[1].1 < w[0].1);
    let slope = fit_rate(&pairs).map(|f| f.slope).unwrap_or(f64::NAN);
    pass &= decreasing && (0.2..=0.8).contains(&slope);
    parts.push(format!("slope {slope:.3}"));
    verdict(pass, parts.join("; "))
}

fn criterion_5(cells: &[DeconvolutionCell]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in cells {
        let re11 = c.outcomes["dp(tau=1.1)"].1;
        let re6 = c.outcomes["dp(tau=6)"].1;
        pass &= re6 > re11;
        parts.push(format!("delta={:e}: {re6:.3e} > {re11:.3e}", c.delta));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_6(dp: &[DeconvolutionCell]) -> Verdict {
    let cells = deconvolution_sweep(&[1e-2, 1e-3], &[Rule::Hdp(HdpConfig::new(0.1))]);
    let mut pass = true;
    let mut parts = Vec::new();
    for c in &cells {
        let (t, re, kind) = c.outcomes["hdp(a=0.1)"];
        let re_dp = dp.iter().find(|d| d.delta == c.delta).unwrap().outcomes["dp(tau=1.1)"].1;
        let interior = kind == RuleKind::Hdp && t > 0.0 && t.is_finite();
        pass &= interior && re <= 3.0 * re_dp && c.kappa_hat >= 0.3;
        parts.push(format!(
            "delta={:e}: t*={t:.1} interior={interior} RE={re:.3e} (dp {re_dp:.3e}) kappa={:.3}",
            c.delta, c.kappa_hat
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_7() -> Verdict {
    let (n, angles, det) = TOMOGRAPHY_DESK;
    let mut res = Vec::new();
    for d in [5e-2, 1e-2, 5e-3] {
        let p = shepp_logan_fixture(n, angles, det, d, 0).unwrap();
        let cfg = IntegrateConfig::new(Scheme::Rk4, TOMOGRAPHY_DT)
            .with_t_max(20.0)
            .with_keep_states(None)
            .with_record_every(10);
        let (outs, _) = run_rules(&p, &[Rule::Dp(DpConfig::new(1.05))], &cfg).unwrap();
        let o = &outs[0];
        res.push((d, o.t_stop, o.relative_error.unwrap(), o.kind));
    }
    let decreasing = res.windows(2).all(|w| w[1].2 < w[0].2);
    let all_dp = res.iter().all(|r| r.3 == RuleKind::Dp);
    let re_1e2 = res[1].2;
    verdict(
        decreasing && all_dp && re_1e2 < 0.15,
        res.iter()
            .map(|(d, t, re, _)| format!("delta_rel={d:e}: t={t:.4} RE={re:.4e}"))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

fn criterion_8(reports: &[(String, EnergyReport)]) -> Verdict {
    let mut pass = !reports.is_empty();
    let mut parts = Vec::new();
    for (name, rep) in reports {
        pass &= rep.flagged() == 0 && !rep.rows.is_empty();
        parts.push(format!(
            "{name}: {} checks, {} violations, max excess {:.1e}",
            rep.rows.len(),
            rep.flagged(),
            rep.max_violation()
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_9() -> Verdict {
    let mut parts = Vec::new();

    // softmax against projected gradient on the simplex
    let mut worst_softmax = 0.0f64;
    for seed in 0..20 {
        let mut r = common::rng(100 + seed);
        let xi = common::random_vector(5, -2.0, 2.0, &mut r);
        let x = softmax_map(&WeightedVector::unit(xi.clone()));
        let oracle = common::entropy_argmin_projected_gradient(xi.as_slice().unwrap(), 1e-3, 40_000);
        worst_softmax = worst_softmax.max(common::max_abs_diff(x.values().as_slice().unwrap(), &oracle));
    }
    parts.push(format!("softmax {worst_softmax:.1e}"));

    // TV prox against face enumeration
    let mut worst_tv = 0.0f64;
    for (rows, cols) in [(1usize, 4usize), (3, 3)] {
        let edges = common::tv_edges(rows, cols);
        for seed in 0..10 {
            let mut r = common::rng(200 + seed);
            let v = common::random_vector(rows * cols, -2.0, 2.0, &mut r);
            let beta = 0.3 + 0.1 * seed as f64;
            let img = Array2::from_shape_vec((rows, cols), v.to_vec()).unwrap();
            let got = tv_prox_pdhg(&img, beta, 1e-13, 1_000_000, None).unwrap().image;
            let oracle = common::tv_prox_brute_force(v.as_slice().unwrap(), beta, &edges);
            worst_tv = worst_tv.max(common::max_abs_diff(got.as_slice().unwrap(), &oracle));
        }
    }
    parts.push(format!("tv prox {worst_tv:.1e}"));

    // Lipschitz continuity and strong monotonicity of grad R*
    let regs = [
        ("quadratic", Regularizer::quadratic(2.0).unwrap(), 16usize),
        ("entropy", Regularizer::EntropySimplex, 16),
        ("tv", Regularizer::tv_strong(0.7, 4, 4).unwrap(), 16),
    ];
    let mut worst_lip = f64::NEG_INFINITY;
    let mut worst_mono = f64::NEG_INFINITY;
    for (k, (_, reg, n)) in regs.iter().enumerate() {
        let c0 = reg.modulus();
        let norm = reg.primal_norm();
        let mut r = common::rng(300 + k as u64);
        let grid = if matches!(reg, Regularizer::EntropySimplex) {
            dualflow::operator::Grid::trapezoid(*n).unwrap()
        } else {
            dualflow::operator::Grid::unit(*n)
        };
        for _ in 0..100 {
            let a = WeightedVector::new(common::random_vector(*n, -3.0, 3.0, &mut r), grid.clone()).unwrap();
            let b = WeightedVector::new(common::random_vector(*n, -3.0, 3.0, &mut r), grid.clone()).unwrap();
            let (xa, xb) = (reg.conj_grad(&a).unwrap(), reg.conj_grad(&b).unwrap());
            let dx = xa.sub(&xb);
            let dxi = a.sub(&b);
            // ||x - x'|| <= ||xi - xi'||_* / (2 c0)
            worst_lip = worst_lip.max(norm.primal(&dx) - norm.dual(&dxi) / (2.0 * c0));
            // <xi - xi', x - x'> >= 2 c0 ||x - x'||^2
            worst_mono = worst_mono.max(2.0 * c0 * norm.primal(&dx).powi(2) - dxi.dot(&dx));
        }
    }
    parts.push(format!("lipschitz excess {worst_lip:.1e}, monotonicity excess {worst_mono:.1e}"));
    verdict(
        worst_softmax <= 1e-8 && worst_tv <= 1e-6 && worst_lip <= 1e-9 && worst_mono <= 1e-9,
        parts.join("; "),
    )
}

fn criterion_10() -> Verdict {
    let op = ForwardOperator::dense(Array2::from_elem((1, 2), 1.0));
    let y = WeightedVector::unit(Array1::from(vec![2.0]));
    let setup = PerturbationSetup {
        base: BaseFunctional { l1: 1.0, quadratic: 0.0 },
        alphas: vec![1.0, 0.1, 0.01, 0.001],
        reference: Some(WeightedVector::unit(Array1::from(vec![1.0, 1.0]))),
    };
    let rep = perturbation_experiment(&setup, &op, &y).unwrap();
    let d: Vec<f64> = rep.rows.iter().map(|r| r.distance).collect();
    // distances are at solver-tolerance level, so monotone means
    // non-increasing up to the residual tolerance
    let monotone = d.windows(2).all(|w| w[1] <= w[0] + 1e-8);
    let last = *d.last().unwrap();
    let psi_ok = rep.rows.iter().all(|r| r.psi_value <= rep.reference_psi + 1e-6);
    verdict(
        !rep.partial && monotone && last <= 0.05 && psi_ok,
        format!(
            "distances {}; psi bounded {psi_ok}",
            d.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_11() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut deconv = ExperimentConfig::preset(Preset::Deconvolution);
    deconv.grid_n = 201;
    deconv.noise_levels = vec![1e-1, 1e-2];
    deconv.seeds = vec![0, 1];
    let mut ct = ExperimentConfig::preset(Preset::Tomography);
    (ct.image_n, ct.n_angles, ct.n_detectors) = (16, 10, 23);
    ct.dt = 0.5 * stability_max_step(
        &ForwardOperator::build_parallel_beam(16, 10, 23).unwrap(),
        &Regularizer::tv_strong(1.0, 16, 16).unwrap(),
    );
    ct.noise_levels = vec![5e-2];
    ct.export_operator = true;
    let mut pass = true;
    let mut files = 0;
    for (name, cfg) in [("deconvolution", deconv), ("tomography", ct)] {
        let mut trees = Vec::new();
        for (run, jobs) in [(0, 1), (1, 2)] {
            let mut c = cfg.clone();
            c.out = tmp.path().join(format!("{name}-{run}"));
            let m = run_experiment(&c, Some(jobs)).unwrap();
            pass &= m.failed_cells() == 0;
            let mut tree = read_tree(&c.out);
            tree.remove("timing.json");
            trees.push(tree);
        }
        files += trees[0].len();
        pass &= trees[0] == trees[1];
    }
    verdict(pass, format!("{files} files compared byte for byte"))
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let mut energy = Vec::new();
    results.push(criterion(1, "residual monotonicity", 60.0, || {
        criterion_1_and_8(&mut energy)
    }));
    results.push(criterion(2, "Showalter closed form", 5.0, criterion_2));
    results.push(criterion(3, "scalar ODE order separation", 1.0, criterion_3));

    // both DP rules share one integration per noise level
    let start = Instant::now();
    let dp_rules = [Rule::Dp(DpConfig::new(1.1)), Rule::Dp(DpConfig::new(6.0))];
    let cells = deconvolution_sweep(&DECONVOLUTION_LADDER, &dp_rules);
    let sweep = start.elapsed().as_secs_f64();
    println!("      deconvolution DP sweep: {sweep:.1} s");
    results.push(criterion(4, "deconvolution DP bands", 180.0 - sweep, || criterion_4(&cells)));
    results.push(criterion(5, "overestimated tau degrades", 180.0 - sweep, || criterion_5(&cells)));
    // no runtime limit is set for the heuristic rule
    results.push(criterion(6, "heuristic rule viability", f64::INFINITY, || criterion_6(&cells)));

    results.push(criterion(7, "desk tomography trend", 300.0, criterion_7));
    results.push(criterion(8, "energy inequality", 60.0, || criterion_8(&energy)));
    results.push(criterion(9, "regularizer oracles", 120.0, criterion_9));
    results.push(criterion(10, "perturbation limit", 30.0, criterion_10));
    results.push(criterion(11, "bitwise determinism", 120.0, criterion_11));

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len(), "acceptance criteria failed");
}
