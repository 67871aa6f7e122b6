//! Runtime checks of the identities and inequalities behind the linear
//! convergence guarantee.

use alloc::vec::Vec;

use super::optimize::IterationRecord;
use super::{cost_from_value, curvature_blocks, gain_residuals, mu, Method};
use crate::linalg::{spd_solve, spectral_norm, trace_of_product};
use crate::model::{MjlsModel, Policy};
use crate::stability::{solve_coupled_lyapunov, solve_state_correlation, SolverConfig};
use crate::{Mat, Result};

/// Relative slack allowed on every inequality check.
pub const CHECK_SLACK: f64 = 1e-9;

/// Both sides of the exact cost-difference expansion between two policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessCheck {
    /// `C(K̂') − C(K̂)`.
    pub lhs: f64,
    /// `−2Σ tr(S_i'ΔK_iᵀL_i) + Σ tr(S_i'ΔK_iᵀΨ_iΔK_i)`.
    pub rhs: f64,
    /// `|lhs − rhs| / (1 + |lhs|)`.
    pub residual: f64,
}

/// Right-hand side of the cost-difference expansion from `from` to `to`, with
/// `L_i`, `Ψ_i` evaluated at `from` and `S_i'` at `to`.
pub(crate) fn smoothness_rhs(
    from: &Policy,
    residuals: &[Mat],
    curvature: &[Mat],
    to: &Policy,
    s_to: &[Mat],
) -> f64 {
    let mut rhs = 0.0;
    for i in 0..from.gains.len() {
        let dk = &from.gains[i] - &to.gains[i];
        let s = &s_to[i];
        let cross = dk.tr_mul(&residuals[i]);
        let quad = dk.tr_mul(&(&curvature[i] * &dk));
        rhs += -2.0 * trace_of_product(s, &cross) + trace_of_product(s, &quad);
    }
    rhs
}

pub(crate) fn smoothness_check(lhs: f64, rhs: f64) -> SmoothnessCheck {
    SmoothnessCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs() / (1.0 + lhs.abs()),
    }
}

/// Evaluates the exact expansion of `C(to) − C(from)`.
pub fn check_almost_smoothness(
    m: &MjlsModel,
    from: &Policy,
    to: &Policy,
    cfg: &SolverConfig,
) -> Result<SmoothnessCheck> {
    let value_from = solve_coupled_lyapunov(m, from, cfg)?;
    let value_to = solve_coupled_lyapunov(m, to, cfg)?;
    let corr_to = solve_state_correlation(m, to, cfg)?;
    let lhs = cost_from_value(m, &value_to.p) - cost_from_value(m, &value_from.p);
    let residuals = gain_residuals(m, from, &value_from);
    let curvature = curvature_blocks(m, &value_from.p);
    let rhs = smoothness_rhs(from, &residuals, &curvature, to, &corr_to.s);
    Ok(smoothness_check(lhs, rhs))
}

/// The chain `gap ≤ b₀ ≤ b₁ ≤ b₂` bounding the optimality gap by the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationCheck {
    /// `C(K̂) − C(K̂*)`.
    pub gap: f64,
    /// `‖χ*‖ Σ tr(L_iᵀΨ_i⁻¹L_i)`, `‖χ*‖/σ_min(R̂) Σ tr(L_iᵀL_i)`,
    /// `‖χ*‖/(μ²σ_min(R̂)) ‖∇C‖²_F`.
    pub bounds: [f64; 3],
    pub holds: [bool; 3],
}

impl DominationCheck {
    pub fn all(&self) -> bool {
        self.holds.iter().all(|&h| h)
    }
}

fn within(lhs: f64, rhs: f64, scale: f64) -> bool {
    lhs <= rhs + CHECK_SLACK * (rhs.abs() + scale.abs())
}

pub(crate) fn domination_check(
    m: &MjlsModel,
    cost: f64,
    residuals: &[Mat],
    curvature: &[Mat],
    grad_norm: f64,
    cstar: f64,
    chi_star_norm: f64,
) -> Result<DominationCheck> {
    let mut natural = 0.0;
    let mut plain = 0.0;
    for (l, psi) in residuals.iter().zip(curvature) {
        natural += trace_of_product(&l.transpose(), &spd_solve(psi, l)?);
        plain += l.norm_squared();
    }
    let r_min = m.r_hat_sigma_min();
    let mu = mu(m);
    let gap = cost - cstar;
    let bounds = [
        chi_star_norm * natural,
        chi_star_norm / r_min * plain,
        chi_star_norm / (mu * mu * r_min) * grad_norm * grad_norm,
    ];
    let holds = [
        within(gap, bounds[0], cstar),
        within(bounds[0], bounds[1], cstar),
        within(bounds[1], bounds[2], cstar),
    ];
    Ok(DominationCheck { gap, bounds, holds })
}

/// Gradient domination at `policy` given the optimal cost and `‖χ_{K̂*}‖`.
pub fn check_gradient_domination(
    m: &MjlsModel,
    policy: &Policy,
    cstar: f64,
    chi_star_norm: f64,
    cfg: &SolverConfig,
) -> Result<DominationCheck> {
    let value = solve_coupled_lyapunov(m, policy, cfg)?;
    let corr = solve_state_correlation(m, policy, cfg)?;
    let residuals = gain_residuals(m, policy, &value);
    let curvature = curvature_blocks(m, &value.p);
    let bundle = super::gradient_from_parts(residuals, &corr);
    domination_check(
        m,
        cost_from_value(m, &value.p),
        &bundle.l,
        &curvature,
        bundle.grad_norm,
        cstar,
        chi_star_norm,
    )
}

/// `Σ_i ‖P_i‖₂ ≤ C(K̂)/μ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub(crate) fn lower_bound_check(m: &MjlsModel, p: &[Mat]) -> LowerBoundCheck {
    let lhs: f64 = p.iter().map(spectral_norm).sum();
    let rhs = cost_from_value(m, p) / mu(m);
    LowerBoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + CHECK_SLACK),
    }
}

pub fn check_cost_lower_bound(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<LowerBoundCheck> {
    let value = solve_coupled_lyapunov(m, policy, cfg)?;
    Ok(lower_bound_check(m, &value.p))
}

/// One-step contraction factor `2ημ/‖χ*‖` (Gauss-Newton) or
/// `2ημσ_min(R̂)/‖χ*‖` (natural PG).
pub fn contraction(m: &MjlsModel, method: Method, eta: f64, chi_star_norm: f64) -> Option<f64> {
    let base = 2.0 * eta * mu(m) / chi_star_norm;
    match method {
        Method::GaussNewton => Some(base),
        Method::NaturalPg => Some(base * m.r_hat_sigma_min()),
        Method::VanillaPg => None,
    }
}

/// Rate-bound verdict for the transition into iterate `iter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCheck {
    pub iter: usize,
    /// False when the step was uncertified or the method has no bound.
    pub applicable: bool,
    pub holds: bool,
    /// `C(K̂ⁿ) − C*`.
    pub gap: f64,
    /// `(1 − contraction)(C(K̂ⁿ⁻¹) − C*)`.
    pub bound: f64,
}

/// Checks `C(K̂ⁿ) − C* ≤ (1 − contraction)(C(K̂ⁿ⁻¹) − C*) + 1e-9·C*` along a run.
pub fn verify_rate_bound(
    records: &[IterationRecord],
    m: &MjlsModel,
    cstar: f64,
    chi_star_norm: f64,
    method: Method,
) -> Vec<RateCheck> {
    records
        .windows(2)
        .map(|w| {
            let (prev, cur) = (&w[0], &w[1]);
            let gap = cur.cost - cstar;
            match contraction(m, method, cur.eta, chi_star_norm) {
                Some(c) if cur.certified => {
                    let bound = (1.0 - c) * (prev.cost - cstar);
                    RateCheck {
                        iter: cur.iter,
                        applicable: true,
                        holds: gap <= bound + CHECK_SLACK * cstar,
                        gap,
                        bound,
                    }
                }
                _ => RateCheck {
                    iter: cur.iter,
                    applicable: false,
                    holds: false,
                    gap,
                    bound: f64::NAN,
                },
            }
        })
        .collect()
}
