mod common;

use common::{gains, random_general_model, random_stabilizing_policy, rel_close, two_mode};
use mjls_core::oracle::{dense_coupled_lyapunov, dense_ms_radius};
use mjls_core::policy_opt::{cost_from_correlation, cost_from_value};
use mjls_core::stability::{
    greedy_gains, is_ms_stabilizing, lyapunov_rhs, ms_spectral_radius, riccati_rhs,
    solve_coupled_lyapunov, solve_coupled_riccati, solve_state_correlation,
};
use mjls_core::{Policy, SolverConfig};

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

/// Closed-form spectral radius of the 2×2 nonnegative matrix `[[a, b], [c, d]]`.
fn perron_2x2(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
    0.5 * (tr + disc)
}

#[test]
fn two_mode_radius_matches_closed_form() {
    let m = two_mode();
    for &(k1, k2) in &[(0.0, 0.0), (0.3, 0.7), (0.5, 1.0), (-0.2, 0.9)] {
        let phi = [0.8 - k1, 1.2 - k2];
        let p = [[0.9, 0.1], [0.2, 0.8]];
        // T(X)_j = Σ_i p_ij φ_i² X_i
        let (a, b) = (p[0][0] * phi[0] * phi[0], p[1][0] * phi[1] * phi[1]);
        let (c, d) = (p[0][1] * phi[0] * phi[0], p[1][1] * phi[1] * phi[1]);
        let expected = perron_2x2(a, b, c, d);
        let got = ms_spectral_radius(&m, &gains(&[k1, k2]), &cfg())
            .unwrap()
            .radius;
        assert!(
            (got - expected).abs() <= 1e-9,
            "k=({k1},{k2}): {got} vs {expected}"
        );
    }
}

#[test]
fn two_mode_open_loop_is_unstable() {
    let m = two_mode();
    let check = is_ms_stabilizing(&m, &Policy::zeros(&m), &cfg()).unwrap();
    assert!(!check.stable);
    assert!(check.radius > 1.0);
}

#[test]
fn two_mode_lyapunov_matches_linear_solve() {
    let m = two_mode();
    let (k1, k2) = (0.3, 0.7);
    let phi = [0.8 - k1, 1.2 - k2];
    let w = [1.0 + k1 * k1, 1.0 + k2 * k2];
    let p = [[0.9, 0.1], [0.2, 0.8]];
    // (1 − φ_i² p_ii) P_i − φ_i² p_ij P_j = w_i
    let m11 = 1.0 - phi[0] * phi[0] * p[0][0];
    let m12 = -phi[0] * phi[0] * p[0][1];
    let m21 = -phi[1] * phi[1] * p[1][0];
    let m22 = 1.0 - phi[1] * phi[1] * p[1][1];
    let det = m11 * m22 - m12 * m21;
    let p1 = (w[0] * m22 - m12 * w[1]) / det;
    let p2 = (m11 * w[1] - m21 * w[0]) / det;

    let value = solve_coupled_lyapunov(&m, &gains(&[k1, k2]), &cfg()).unwrap();
    assert!(rel_close(value.p[0][(0, 0)], p1, 1e-11));
    assert!(rel_close(value.p[1][(0, 0)], p2, 1e-11));
}

#[test]
fn cost_is_the_same_through_value_and_correlation() {
    for seed in 0..10 {
        let m = random_general_model(3, 3, 2, seed, 0.8);
        let pol = random_stabilizing_policy(&m, &Policy::zeros(&m), seed, 0.95);
        let value = solve_coupled_lyapunov(&m, &pol, &cfg()).unwrap();
        let corr = solve_state_correlation(&m, &pol, &cfg()).unwrap();
        let a = cost_from_value(&m, &value.p);
        let b = cost_from_correlation(&m, &pol, &corr.s);
        assert!(rel_close(a, b, 1e-10), "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn lyapunov_iterates_increase_monotonically_from_zero() {
    let m = random_general_model(4, 3, 2, 7, 0.9);
    let pol = Policy::zeros(&m);
    let mut p: Vec<_> = (0..m.n_s)
        .map(|_| mjls_core::Mat::zeros(m.d, m.d))
        .collect();
    for _ in 0..50 {
        let next = lyapunov_rhs(&m, &pol, &p);
        for (a, b) in p.iter().zip(&next) {
            let diff = b - a;
            let min_eig = diff.symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-10 * (1.0 + b.norm()));
        }
        p = next;
    }
}

#[test]
fn riccati_solution_is_a_fixed_point_and_optimal() {
    for seed in 0..5 {
        let m = random_general_model(3, 4, 2, 100 + seed, 1.3);
        let (value, kstar) = solve_coupled_riccati(&m, &cfg()).unwrap();
        let rhs = riccati_rhs(&m, &value.p).unwrap();
        for (p, r) in value.p.iter().zip(&rhs) {
            assert!((p - r).norm() <= 1e-9 * (1.0 + p.norm()));
        }
        // the greedy policy evaluated on its own reproduces P
        let again = greedy_gains(&m, &value.p).unwrap();
        assert!(again.max_abs_diff(&kstar) <= 1e-12 * (1.0 + kstar.norm()));
        let pv = solve_coupled_lyapunov(&m, &kstar, &cfg()).unwrap();
        for (a, b) in pv.p.iter().zip(&value.p) {
            assert!((a - b).norm() <= 1e-8 * (1.0 + b.norm()));
        }
        // no random stabilizing perturbation does better
        let c_star = cost_from_value(&m, &value.p);
        for t in 0..5 {
            let pol = random_stabilizing_policy(&m, &kstar, seed * 10 + t, 0.999);
            let c = cost_from_value(&m, &solve_coupled_lyapunov(&m, &pol, &cfg()).unwrap().p);
            assert!(c >= c_star * (1.0 - 1e-12));
        }
    }
}

#[test]
fn fixed_point_solvers_agree_with_dense_oracle() {
    for seed in 0..10 {
        let m = random_general_model(2 + (seed as usize % 4), 3, 2, 200 + seed, 0.9);
        let pol = random_stabilizing_policy(&m, &Policy::zeros(&m), seed, 0.97);
        let fast = solve_coupled_lyapunov(&m, &pol, &cfg()).unwrap();
        let dense = dense_coupled_lyapunov(&m, &pol).unwrap();
        for (a, b) in fast.p.iter().zip(&dense.p) {
            assert!((a - b).norm() <= 1e-9 * (1.0 + b.norm()));
        }
        let r_fast = ms_spectral_radius(&m, &pol, &cfg()).unwrap().radius;
        let r_dense = dense_ms_radius(&m, &pol).unwrap();
        assert!(
            (r_fast - r_dense).abs() <= 1e-8,
            "seed {seed}: {r_fast} vs {r_dense}"
        );
    }
}
