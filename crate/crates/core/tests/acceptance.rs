//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (outside the test harness capture) before asserting.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{random_general_model, random_stabilizing_policy};
use mjls_core::oracle::{
    dense_coupled_lyapunov, dense_ms_radius, fd_gradient, lti_lqr_reference, mc_cost, McConfig,
    X0Law, DENSE_LIMIT,
};
use mjls_core::policy_opt::{
    check_almost_smoothness, check_cost_lower_bound, check_gradient_domination, cost, optimize,
    policy_gradient, verify_rate_bound,
};
use mjls_core::stability::{
    ms_spectral_radius, solve_coupled_lyapunov, solve_coupled_riccati, solve_state_correlation,
};
use mjls_core::{
    generate_random_model, ConvergenceReport, Method, MjlsModel, OptimalSolution, OptimizerConfig,
    Policy, SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance {id}] {verdict} {name}: {detail} ({:.1} s)",
        elapsed.as_secs_f64()
    );
}

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn max_rel_entry(a: &[mjls_core::Mat], b: &[mjls_core::Mat]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    let scale: f64 = b.iter().map(|y| y.norm_squared()).sum();
    (diff / scale).sqrt()
}

#[test]
fn gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let n_s = [1, 2, 5][t as usize % 3];
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=2);
        let m = random_general_model(n_s, d, k, 1000 + t, rng.random_range(0.5..0.95));
        let pol = random_stabilizing_policy(&m, &Policy::zeros(&m), t, 0.95);
        let g = policy_gradient(&m, &pol, &cfg()).unwrap();
        let fd = fd_gradient(&m, &pol, 1e-5, &cfg()).unwrap();
        worst = worst.max(max_rel_entry(&fd, &g.grad));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && elapsed < Duration::from_secs(30);
    report(
        1,
        "gradient oracle",
        pass,
        &format!("worst relative error {worst:.2e} over 50 models"),
        elapsed,
    );
    assert!(pass);
}

fn desk_config(method: Method) -> OptimizerConfig {
    let mut oc = OptimizerConfig::new(method);
    oc.rel_gap_tol = 1e-10;
    oc.grad_tol = 1e-8;
    oc.max_iters = 5000;
    oc
}

struct DeskRun {
    gap: f64,
    kdiff: f64,
    rate_ok: bool,
    radius_ok: bool,
    converged: bool,
}

fn desk_run(m: &MjlsModel, opt: &OptimalSolution, method: Method) -> DeskRun {
    let r: ConvergenceReport =
        optimize(m, &Policy::zeros(m), &desk_config(method), Some(opt)).unwrap();
    let checks = verify_rate_bound(&r.records, m, opt.cost, opt.chi_norm, method);
    DeskRun {
        gap: r.final_gap.unwrap(),
        kdiff: r.final_policy.max_abs_diff(&opt.policy),
        rate_ok: checks.iter().all(|c| c.applicable && c.holds),
        radius_ok: r.records.iter().all(|rec| rec.ms_radius < 1.0),
        converged: r.converged(),
    }
}

/// Criteria 2 and 3 share their runs.
#[test]
fn desk_scale_convergence_and_rate_certificates() {
    let start = Instant::now();
    let mut worst_gap: f64 = 0.0;
    let mut worst_k: f64 = 0.0;
    let mut all_converged = true;
    let mut rate_ok = true;
    let mut radius_ok = true;
    for seed in 0..20 {
        let m = generate_random_model(10, 20, 4, seed, 99.0, 0.95).unwrap();
        let opt = OptimalSolution::solve(&m, &cfg()).unwrap();
        for method in [Method::GaussNewton, Method::NaturalPg] {
            let run = desk_run(&m, &opt, method);
            worst_gap = worst_gap.max(run.gap);
            worst_k = worst_k.max(run.kdiff);
            all_converged &= run.converged;
            rate_ok &= run.rate_ok;
            radius_ok &= run.radius_ok;
        }
    }
    let elapsed = start.elapsed();
    let pass2 =
        all_converged && worst_gap <= 1e-8 && worst_k <= 1e-6 && elapsed < Duration::from_secs(300);
    report(
        2,
        "global convergence",
        pass2,
        &format!("40 runs, worst gap {worst_gap:.2e}, worst gain error {worst_k:.2e}"),
        elapsed,
    );
    let pass3 = rate_ok && radius_ok;
    report(
        3,
        "rate certification",
        pass3,
        &format!("rate bound held: {rate_ok}, all radii < 1: {radius_ok}"),
        elapsed,
    );
    assert!(pass2 && pass3);
}

const THRESHOLDS: [f64; 8] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

fn compare_convergence_speed(n_s: usize, d: usize, k: usize, npg_iters: usize) -> (bool, String) {
    let m = generate_random_model(n_s, d, k, 0, 99.0, 0.95).unwrap();
    let opt = OptimalSolution::solve(&m, &cfg()).unwrap();
    let mut gn_cfg = OptimizerConfig::new(Method::GaussNewton);
    gn_cfg.rel_gap_tol = 1e-8;
    let mut npg_cfg = OptimizerConfig::new(Method::NaturalPg);
    npg_cfg.rel_gap_tol = 1e-8;
    npg_cfg.max_iters = npg_iters;
    let gn = optimize(&m, &Policy::zeros(&m), &gn_cfg, Some(&opt)).unwrap();
    let npg = optimize(&m, &Policy::zeros(&m), &npg_cfg, Some(&opt)).unwrap();

    let monotone = gn.non_descent.is_empty() && npg.non_descent.is_empty();
    let initial = gn.records[0].rel_gap.unwrap();
    let mut faster = true;
    let mut compared = Vec::new();
    for &t in THRESHOLDS.iter().filter(|&&t| t < initial) {
        let (Some(g), n) = (gn.first_iter_below(t), npg.first_iter_below(t)) else {
            faster = false;
            continue;
        };
        // NPG not reaching the threshold within its budget counts as slower
        faster &= n.is_none_or(|n| g < n);
        compared.push(format!(
            "{t:.0e}: {g} vs {}",
            n.map_or("-".into(), |n| n.to_string())
        ));
    }
    let pass = monotone && faster && !compared.is_empty();
    let detail = format!(
        "{n_s}x{d}x{k}, monotone {monotone}, GN vs NPG iterations [{}]",
        compared.join(", ")
    );
    (pass, detail)
}

#[test]
fn gauss_newton_outpaces_natural_gradient() {
    let start = Instant::now();
    let (pass, detail) = compare_convergence_speed(100, 100, 20, 60);
    let elapsed = start.elapsed();
    let pass = pass && elapsed < Duration::from_secs(7200);
    report(4, "convergence curves", pass, &detail, elapsed);
    assert!(pass);
}

/// Smaller variant of the comparison above for quick local runs.
#[test]
#[ignore = "covered by the full-size comparison"]
fn gauss_newton_outpaces_natural_gradient_reduced_scale() {
    let start = Instant::now();
    let (pass, detail) = compare_convergence_speed(50, 50, 10, 60);
    let elapsed = start.elapsed();
    report(
        4,
        "convergence curves (reduced scale)",
        pass,
        &detail,
        elapsed,
    );
    assert!(pass);
}

#[test]
fn inequality_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_smooth: f64 = 0.0;
    let mut domination = true;
    let mut lower = true;
    let mut done = 0;
    let mut seed = 0u64;
    while done < 200 {
        seed += 1;
        let n_s = rng.random_range(1..=5);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=2);
        let m = random_general_model(n_s, d, k, 50_000 + seed, rng.random_range(0.5..1.4));
        let Ok(opt) = OptimalSolution::solve(&m, &cfg()) else {
            continue;
        };
        let a = random_stabilizing_policy(&m, &opt.policy, seed, 0.98);
        let b = random_stabilizing_policy(&m, &opt.policy, seed + 1_000_000, 0.98);
        let s = check_almost_smoothness(&m, &a, &b, &cfg()).unwrap();
        worst_smooth = worst_smooth.max(s.residual);
        for p in [&a, &b] {
            domination &= check_gradient_domination(&m, p, opt.cost, opt.chi_norm, &cfg())
                .unwrap()
                .all();
            lower &= check_cost_lower_bound(&m, p, &cfg()).unwrap().holds;
        }
        done += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst_smooth <= 1e-8 && domination && lower && elapsed < Duration::from_secs(120);
    report(
        5,
        "inequality suite",
        pass,
        &format!("200 instances, worst expansion residual {worst_smooth:.2e}, domination {domination}, lower bound {lower}"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn single_mode_matches_classical_lqr() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut seed = 0u64;
    while done < 20 {
        seed += 1;
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=3);
        let m = random_general_model(1, d, k, 70_000 + seed, rng.random_range(0.5..1.5));
        let Ok(lqr) = lti_lqr_reference(&m.a[0], &m.b[0], &m.q[0], &m.r[0], &m.sigma0) else {
            continue;
        };
        let (value, kstar) = solve_coupled_riccati(&m, &cfg()).unwrap();
        let pol = random_stabilizing_policy(&m, &kstar, seed, 0.95);
        let kk = &pol.gains[0];
        let p = &solve_coupled_lyapunov(&m, &pol, &cfg()).unwrap().p[0];
        let s = &solve_state_correlation(&m, &pol, &cfg()).unwrap().s[0];
        let g = &policy_gradient(&m, &pol, &cfg()).unwrap().grad[0];
        let c = cost(&m, &pol, &cfg()).unwrap();
        let rel = |a: &mjls_core::Mat, b: &mjls_core::Mat| (a - b).norm() / (1.0 + b.norm());
        let errs = [
            rel(&value.p[0], &lqr.p),
            rel(&kstar.gains[0], &lqr.k),
            rel(p, &lqr.value_of(kk).unwrap()),
            rel(s, &lqr.correlation_of(kk).unwrap()),
            rel(g, &lqr.gradient_of(kk).unwrap()),
            (c - lqr.cost_of(kk).unwrap()).abs() / (1.0 + c.abs()),
        ];
        worst = errs.iter().copied().fold(worst, f64::max);
        done += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-8;
    report(
        6,
        "single-mode reduction",
        pass,
        &format!("20 instances, worst relative error {worst:.2e}"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn monte_carlo_agrees_with_analytic_cost() {
    let start = Instant::now();
    let mut worst_z: f64 = 0.0;
    let mut truncation_ok = true;
    for t in 0..10u64 {
        let n_s = 1 + (t as usize % 3);
        let m = random_general_model(n_s, 2, 1, 80_000 + t, 0.6);
        let pol = random_stabilizing_policy(&m, &Policy::zeros(&m), t, 0.6);
        let radius = ms_spectral_radius(&m, &pol, &cfg()).unwrap().radius;
        let exact = cost(&m, &pol, &cfg()).unwrap();
        // keep the tail below 1e-6 of the cost, far under a tenth of the standard error
        let horizon = ((1e-6 * (1.0 - radius)).ln() / radius.ln()).ceil().max(1.0) as usize;
        let est = mc_cost(
            &m,
            &pol,
            &McConfig {
                n_rollouts: 100_000,
                horizon,
                seed: 1000 * t,
                x0_law: X0Law::Gaussian,
            },
        )
        .unwrap();
        truncation_ok &= est.truncation_bound < 0.1 * est.standard_error;
        worst_z = worst_z.max((est.estimate - exact).abs() / est.standard_error);
    }
    let elapsed = start.elapsed();
    let pass = worst_z <= 3.0 && truncation_ok;
    report(
        7,
        "Monte-Carlo consistency",
        pass,
        &format!("10 instances, worst |z| {worst_z:.2}, truncation below 0.1 se: {truncation_ok}"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn fast_solvers_agree_with_dense_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_p: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    let mut count = 0;
    for t in 0..100u64 {
        let n_s = rng.random_range(1..=10);
        let d = rng.random_range(1..=6);
        let k = rng.random_range(1..=3);
        assert!(n_s * d * d <= DENSE_LIMIT);
        let m = random_general_model(n_s, d, k, 90_000 + t, rng.random_range(0.3..0.99));
        let pol = random_stabilizing_policy(&m, &Policy::zeros(&m), t, 0.99);
        let fast = solve_coupled_lyapunov(&m, &pol, &cfg()).unwrap();
        let dense = dense_coupled_lyapunov(&m, &pol).unwrap();
        for (a, b) in fast.p.iter().zip(&dense.p) {
            worst_p = worst_p.max((a - b).norm() / (1.0 + b.norm()));
        }
        let r_fast = ms_spectral_radius(&m, &pol, &cfg()).unwrap().radius;
        worst_r = worst_r.max((r_fast - dense_ms_radius(&m, &pol).unwrap()).abs());
        count += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst_p <= 1e-9 && worst_r <= 1e-8;
    report(
        8,
        "dense oracle cross-checks",
        pass,
        &format!("{count} instances, worst Lyapunov {worst_p:.2e}, worst radius {worst_r:.2e}"),
        elapsed,
    );
    assert!(pass);
}
