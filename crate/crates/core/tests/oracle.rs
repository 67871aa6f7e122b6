mod common;

use common::{gains, random_general_model, random_stabilizing_policy, rel_close, two_mode};
use mjls_core::oracle::{
    fd_gradient, lti_lqr_reference, mc_cost, relative_discrepancy, McConfig, X0Law,
};
use mjls_core::policy_opt::{cost, policy_gradient};
use mjls_core::stability::{
    solve_coupled_lyapunov, solve_coupled_riccati, solve_state_correlation,
};
use mjls_core::{Mat, Policy, SolverConfig};

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn mc(n: usize, horizon: usize, law: X0Law) -> McConfig {
    McConfig {
        n_rollouts: n,
        horizon,
        seed: 17,
        x0_law: law,
    }
}

#[test]
fn monte_carlo_matches_two_mode_cost() {
    let m = two_mode();
    let pol = gains(&[0.3, 0.7]);
    let exact = cost(&m, &pol, &cfg()).unwrap();
    for law in [X0Law::Gaussian, X0Law::UnitSphereScaled] {
        let est = mc_cost(&m, &pol, &mc(20_000, 80, law.clone())).unwrap();
        assert!(est.truncation_bound < 0.1 * est.standard_error);
        assert!(
            (est.estimate - exact).abs() <= 3.0 * est.standard_error,
            "{law:?}: {} vs {exact} (se {})",
            est.estimate,
            est.standard_error
        );
    }
}

#[test]
fn monte_carlo_matches_scalar_cost() {
    let m = common::scalar_model(&[0.5], &[1.0], &[1.0]);
    let est = mc_cost(&m, &gains(&[0.0]), &mc(20_000, 60, X0Law::Gaussian)).unwrap();
    assert!((est.estimate - 4.0 / 3.0).abs() <= 3.0 * est.standard_error);
}

#[test]
fn monte_carlo_error_shrinks_with_root_n() {
    let m = two_mode();
    let pol = gains(&[0.3, 0.7]);
    let small = mc_cost(&m, &pol, &mc(10_000, 60, X0Law::Gaussian)).unwrap();
    let large = mc_cost(&m, &pol, &mc(20_000, 60, X0Law::Gaussian)).unwrap();
    let ratio = large.standard_error / small.standard_error;
    let expected = 1.0 / 2f64.sqrt();
    assert!((ratio - expected).abs() <= 0.2 * expected, "ratio {ratio}");
}

#[test]
fn monte_carlo_is_deterministic_per_seed() {
    let m = two_mode();
    let pol = gains(&[0.3, 0.7]);
    let a = mc_cost(&m, &pol, &mc(500, 30, X0Law::Gaussian)).unwrap();
    let b = mc_cost(&m, &pol, &mc(500, 30, X0Law::Gaussian)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn finite_differences_match_on_a_three_mode_model() {
    let m = random_general_model(3, 2, 1, 31, 0.9);
    let pol = random_stabilizing_policy(&m, &Policy::zeros(&m), 31, 0.95);
    let g = policy_gradient(&m, &pol, &cfg()).unwrap();
    let fd = fd_gradient(&m, &pol, 1e-5, &cfg()).unwrap();
    assert!(relative_discrepancy(&g.grad, &fd) <= 1e-6);
}

#[test]
fn single_mode_reduces_to_classical_lqr() {
    for seed in 0..5 {
        let m = random_general_model(1, 3, 2, 900 + seed, 1.2);
        let lqr = lti_lqr_reference(&m.a[0], &m.b[0], &m.q[0], &m.r[0], &m.sigma0).unwrap();
        let (value, kstar) = solve_coupled_riccati(&m, &cfg()).unwrap();
        assert!((&value.p[0] - &lqr.p).norm() <= 1e-8 * (1.0 + lqr.p.norm()));
        assert!((&kstar.gains[0] - &lqr.k).norm() <= 1e-8 * (1.0 + lqr.k.norm()));

        let pol = random_stabilizing_policy(&m, &kstar, seed, 0.9);
        let k = &pol.gains[0];
        let p = solve_coupled_lyapunov(&m, &pol, &cfg())
            .unwrap()
            .p
            .remove(0);
        let s = solve_state_correlation(&m, &pol, &cfg())
            .unwrap()
            .s
            .remove(0);
        assert!((p - lqr.value_of(k).unwrap()).norm() <= 1e-8);
        assert!((s - lqr.correlation_of(k).unwrap()).norm() <= 1e-8);
        assert!(rel_close(
            cost(&m, &pol, &cfg()).unwrap(),
            lqr.cost_of(k).unwrap(),
            1e-10
        ));
        let g = policy_gradient(&m, &pol, &cfg()).unwrap();
        assert!((&g.grad[0] - lqr.gradient_of(k).unwrap()).norm() <= 1e-8);
    }
}

#[test]
fn lqr_is_linear_in_the_cost_weights() {
    let m = random_general_model(1, 3, 2, 4, 1.1);
    let base = lti_lqr_reference(&m.a[0], &m.b[0], &m.q[0], &m.r[0], &m.sigma0).unwrap();
    let doubled = lti_lqr_reference(
        &m.a[0],
        &m.b[0],
        &(&m.q[0] * 2.0),
        &(&m.r[0] * 2.0),
        &m.sigma0,
    )
    .unwrap();
    assert!((&doubled.p - &base.p * 2.0).norm() <= 1e-9 * base.p.norm());
    assert!((&doubled.k - &base.k).norm() <= 1e-9 * (1.0 + base.k.norm()));
}

#[test]
fn zero_dynamics_give_zero_gain() {
    let z = Mat::zeros(2, 2);
    let lqr = lti_lqr_reference(
        &z,
        &Mat::identity(2, 1),
        &Mat::identity(2, 2),
        &Mat::identity(1, 1),
        &Mat::identity(2, 2),
    )
    .unwrap();
    assert!(lqr.k.norm() < 1e-15);
    assert!((&lqr.p - Mat::identity(2, 2)).norm() < 1e-15);
}
