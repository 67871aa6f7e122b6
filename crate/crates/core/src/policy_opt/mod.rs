//! Cost, exact policy gradient, the Gauss-Newton / natural / vanilla policy
//! gradient steps, the optimizer loop, and numerical checks of the
//! convergence theory.

use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{add_scaled, spectral_norm, sym_min_eig, trace_of_product};
use crate::model::{CoupledValue, GradientBundle, MjlsModel, Policy, StateCorrelation};
use crate::stability::{
    mode_expectation, solve_coupled_lyapunov, solve_coupled_riccati, solve_state_correlation,
    SolverConfig,
};
use crate::{Error, Mat, Result};

mod checks;
mod optimize;
mod steps;

pub use checks::{
    check_almost_smoothness, check_cost_lower_bound, check_gradient_domination, contraction,
    verify_rate_bound, DominationCheck, LowerBoundCheck, RateCheck, SmoothnessCheck, CHECK_SLACK,
};
pub use optimize::{
    optimize, optimize_with, ConvergenceReport, InequalityChecks, IterationRecord, OptimizerConfig,
    StepSize, Termination,
};
pub use steps::{
    npg_stable_step, step, step_gauss_newton, step_natural_pg, step_vanilla_pg, StepOutcome,
};

/// Policy update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// `K_i ← K_i − 2η(R_i + B_iᵀ𝓔_i(P)B_i)⁻¹L_i`.
    GaussNewton,
    /// `K̂ ← K̂ − η∇C(K̂)χ⁻¹`, i.e. `K_i ← K_i − 2ηL_i`.
    NaturalPg,
    /// `K̂ ← K̂ − η∇C(K̂)`; no mean-square convergence guarantee.
    VanillaPg,
}

impl Method {
    /// Short name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::GaussNewton => "gn",
            Method::NaturalPg => "npg",
            Method::VanillaPg => "pg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gn" | "gauss_newton" | "gauss-newton" => Some(Method::GaussNewton),
            "npg" | "natural_pg" | "natural-pg" => Some(Method::NaturalPg),
            "pg" | "vanilla_pg" | "vanilla-pg" => Some(Method::VanillaPg),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `C = tr((Σ_i ρ_i P_i)·sigma0)` for a solved value tuple.
pub fn cost_from_value(m: &MjlsModel, p: &[Mat]) -> f64 {
    let mut weighted = Mat::zeros(m.d, m.d);
    for (rho, pi) in m.rho.iter().zip(p) {
        add_scaled(&mut weighted, *rho, pi);
    }
    trace_of_product(&weighted, &m.sigma0)
}

/// Trace-duality form `Σ_i tr((Q_i + K_iᵀR_iK_i)·S_i)` of the cost.
pub fn cost_from_correlation(m: &MjlsModel, policy: &Policy, s: &[Mat]) -> f64 {
    m.stage_weights(policy)
        .iter()
        .zip(s)
        .map(|(w, s)| trace_of_product(w, s))
        .sum()
}

/// Infinite-horizon cost `C(K̂)`.
///
/// A policy that is not mean-square stabilizing has infinite cost, reported as
/// [`Error::NotMsStable`].
pub fn cost(m: &MjlsModel, policy: &Policy, cfg: &SolverConfig) -> Result<f64> {
    let value = solve_coupled_lyapunov(m, policy, cfg)?;
    Ok(cost_from_value(m, &value.p))
}

/// Curvature blocks `Ψ_i = R_i + B_iᵀ𝓔_i(P)B_i`.
pub fn curvature_blocks(m: &MjlsModel, p: &[Mat]) -> Vec<Mat> {
    (0..m.n_s)
        .map(|i| {
            let e = mode_expectation(m, p, i);
            &m.r[i] + m.b[i].tr_mul(&e) * &m.b[i]
        })
        .collect()
}

/// `L_i(K̂) = (R_i + B_iᵀ𝓔_i(P)B_i)K_i − B_iᵀ𝓔_i(P)A_i`, with `P` the value of `K̂`.
pub fn gain_residuals(m: &MjlsModel, policy: &Policy, value: &CoupledValue) -> Vec<Mat> {
    (0..m.n_s)
        .map(|i| {
            let e = mode_expectation(m, &value.p, i);
            let bt_e = m.b[i].tr_mul(&e);
            let psi = &m.r[i] + &bt_e * &m.b[i];
            psi * &policy.gains[i] - bt_e * &m.a[i]
        })
        .collect()
}

/// Assembles `∇_{K_i}C = 2 L_i S_i`.
pub fn gradient_from_parts(l: Vec<Mat>, correlation: &StateCorrelation) -> GradientBundle {
    let grad: Vec<Mat> = l
        .iter()
        .zip(&correlation.s)
        .map(|(l, s)| (l * s) * 2.0)
        .collect();
    let grad_norm = libm::sqrt(grad.iter().map(|g| g.norm_squared()).sum::<f64>());
    GradientBundle { l, grad, grad_norm }
}

/// Exact policy gradient `∇C(K̂) = 2[L_1 … L_{n_s}]χ`.
pub fn policy_gradient(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<GradientBundle> {
    let value = solve_coupled_lyapunov(m, policy, cfg)?;
    let correlation = solve_state_correlation(m, policy, cfg)?;
    Ok(gradient_from_parts(
        gain_residuals(m, policy, &value),
        &correlation,
    ))
}

/// `μ = min_i ρ_i · σ_min(sigma0)`.
pub fn mu(m: &MjlsModel) -> f64 {
    let rho_min = m.rho.iter().copied().fold(f64::INFINITY, f64::min);
    rho_min * sym_min_eig(&m.sigma0)
}

/// A step size together with whether the theory backs it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBound {
    pub eta: f64,
    pub certified: bool,
}

/// Largest step size with a global convergence guarantee from a start of cost
/// `initial_cost`.
///
/// Gauss-Newton: `1/2`. Natural PG: `1/(2(‖R̂‖ + ‖B̂‖²·C(K̂⁰)/μ))`. Vanilla PG
/// has no guarantee; a heuristic scaled from the natural PG bound is returned
/// and flagged uncertified.
pub fn max_step(m: &MjlsModel, initial_cost: f64, method: Method) -> Result<StepBound> {
    if method == Method::GaussNewton {
        return Ok(StepBound {
            eta: 0.5,
            certified: true,
        });
    }
    if !initial_cost.is_finite() || !(initial_cost > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "initial cost must be finite and positive, got {initial_cost}"
        )));
    }
    let b = m.b_hat_norm();
    let npg = 1.0 / (2.0 * (m.r_hat_norm() + b * b * initial_cost / mu(m)));
    match method {
        Method::NaturalPg => Ok(StepBound {
            eta: npg,
            certified: true,
        }),
        // ‖S_i‖ ≤ C/λ_min(Q̂) turns the natural step into a comparable plain step
        _ => Ok(StepBound {
            eta: npg * m.q_hat_sigma_min() / initial_cost,
            certified: false,
        }),
    }
}

/// The optimum from the coupled Riccati equations, with the quantities the
/// rate bounds need.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub value: CoupledValue,
    pub policy: Policy,
    pub cost: f64,
    pub correlation: StateCorrelation,
    /// `‖χ_{K̂*}‖ = max_i ‖S_i*‖₂`.
    pub chi_norm: f64,
}

impl OptimalSolution {
    pub fn solve(m: &MjlsModel, cfg: &SolverConfig) -> Result<Self> {
        let (value, policy) = solve_coupled_riccati(m, cfg)?;
        Self::from_policy(m, policy, value, cfg)
    }

    /// Completes a known optimal policy (for instance read from disk).
    pub fn from_policy(
        m: &MjlsModel,
        policy: Policy,
        value: CoupledValue,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        let correlation = solve_state_correlation(m, &policy, cfg)?;
        let chi_norm = correlation.s.iter().map(spectral_norm).fold(0.0, f64::max);
        Ok(Self {
            cost: cost_from_value(m, &value.p),
            value,
            policy,
            correlation,
            chi_norm,
        })
    }

    /// Builds the solution around `policy` by solving its Lyapunov equations.
    pub fn for_policy(m: &MjlsModel, policy: Policy, cfg: &SolverConfig) -> Result<Self> {
        let value = solve_coupled_lyapunov(m, &policy, cfg)?;
        Self::from_policy(m, policy, value, cfg)
    }
}
