use alloc::vec::Vec;

use super::{curvature_blocks, gain_residuals, gradient_from_parts, Method};
use crate::linalg::{spd_solve, spectral_norm};
use crate::model::{CoupledValue, MjlsModel, Policy, StateCorrelation};
use crate::stability::{solve_coupled_lyapunov, solve_state_correlation, SolverConfig};
use crate::{Error, Mat, Result};

/// A stepped policy and whether the step size carries the stability and
/// contraction guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub policy: Policy,
    pub certified: bool,
    pub eta: f64,
}

/// `1/(2 max_i ‖R_i + B_iᵀ𝓔_i(P)B_i‖₂)`: the natural-gradient step below which
/// the next iterate is stabilizing and the one-step contraction holds.
pub fn npg_stable_step(curvature: &[Mat]) -> f64 {
    let worst = curvature.iter().map(spectral_norm).fold(0.0, f64::max);
    1.0 / (2.0 * worst)
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!(
            "step size must be positive, got {eta}"
        )))
    }
}

pub(crate) fn gauss_newton_from(
    policy: &Policy,
    curvature: &[Mat],
    residuals: &[Mat],
    eta: f64,
) -> Result<Policy> {
    let gains = policy
        .gains
        .iter()
        .zip(curvature.iter().zip(residuals))
        .map(|(k, (psi, l))| Ok(k - spd_solve(psi, l)? * (2.0 * eta)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Policy::new(gains))
}

pub(crate) fn natural_from(policy: &Policy, residuals: &[Mat], eta: f64) -> Policy {
    Policy::new(
        policy
            .gains
            .iter()
            .zip(residuals)
            .map(|(k, l)| k - l * (2.0 * eta))
            .collect(),
    )
}

pub(crate) fn vanilla_from(policy: &Policy, grad: &[Mat], eta: f64) -> Policy {
    Policy::new(
        policy
            .gains
            .iter()
            .zip(grad)
            .map(|(k, g)| k - g * eta)
            .collect(),
    )
}

fn value_and_curvature(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<(CoupledValue, Vec<Mat>, Vec<Mat>)> {
    let value = solve_coupled_lyapunov(m, policy, cfg)?;
    let curvature = curvature_blocks(m, &value.p);
    let residuals = gain_residuals(m, policy, &value);
    Ok((value, curvature, residuals))
}

/// One Gauss-Newton step. Certified for `eta ≤ 1/2`.
pub fn step_gauss_newton(
    m: &MjlsModel,
    policy: &Policy,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome> {
    check_eta(eta)?;
    let (_, curvature, residuals) = value_and_curvature(m, policy, cfg)?;
    Ok(StepOutcome {
        policy: gauss_newton_from(policy, &curvature, &residuals, eta)?,
        certified: eta <= 0.5,
        eta,
    })
}

/// One natural policy gradient step `K_i − 2ηL_i`. Certified when
/// `eta ≤ 1/(2‖R̂ + B̂ᵀ𝓔̂(P)B̂‖)` at the current policy.
pub fn step_natural_pg(
    m: &MjlsModel,
    policy: &Policy,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome> {
    check_eta(eta)?;
    let (_, curvature, residuals) = value_and_curvature(m, policy, cfg)?;
    Ok(StepOutcome {
        policy: natural_from(policy, &residuals, eta),
        certified: eta <= npg_stable_step(&curvature),
        eta,
    })
}

/// One plain gradient step `K_i − η∇_{K_i}C`. Never certified; callers must
/// re-check stability.
pub fn step_vanilla_pg(
    m: &MjlsModel,
    policy: &Policy,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome> {
    check_eta(eta)?;
    let (_, _, residuals) = value_and_curvature(m, policy, cfg)?;
    let correlation: StateCorrelation = solve_state_correlation(m, policy, cfg)?;
    let bundle = gradient_from_parts(residuals, &correlation);
    Ok(StepOutcome {
        policy: vanilla_from(policy, &bundle.grad, eta),
        certified: false,
        eta,
    })
}

/// Dispatches to the step of `method`.
pub fn step(
    m: &MjlsModel,
    policy: &Policy,
    method: Method,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome> {
    match method {
        Method::GaussNewton => step_gauss_newton(m, policy, eta, cfg),
        Method::NaturalPg => step_natural_pg(m, policy, eta, cfg),
        Method::VanillaPg => step_vanilla_pg(m, policy, eta, cfg),
    }
}
