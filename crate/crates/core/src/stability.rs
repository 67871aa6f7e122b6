//! Mean-square stability certification and the coupled Lyapunov / Riccati
//! fixed-point solvers.
//!
//! All solvers work on tuples of `d×d` blocks and never assemble the
//! `n_s·d² × n_s·d²` vectorized operators (see [`crate::oracle`] for those).

use alloc::vec::Vec;

use crate::linalg::{add_scaled, spd_solve, symmetrize};
use crate::model::{CoupledValue, MjlsModel, Policy, StateCorrelation};
use crate::{Error, Mat, Result};

/// Iterates whose norm exceeds this multiple of the reference norm are
/// treated as divergent.
const DIVERGENCE_CAP: f64 = 1e12;
/// Sweeps between divergence checkpoints.
const DIVERGENCE_WINDOW: usize = 100;
/// Consecutive window-over-window residual increases that count as divergence.
const DIVERGENCE_STREAK: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative fixed-point residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative accuracy target for the power-iteration radius estimate.
    pub power_iter_tol: f64,
    pub power_iter_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            power_iter_tol: 1e-12,
            power_iter_max: 50_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "solver tol must be > 0 and max_iter >= 1".into(),
            ));
        }
        if !(self.power_iter_tol > 0.0) || self.power_iter_max == 0 {
            return Err(Error::InvalidArgument(
                "power_iter_tol must be > 0 and power_iter_max >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `𝓔_i(P) = Σ_j p_ij P_j`.
pub fn mode_expectation(m: &MjlsModel, p: &[Mat], i: usize) -> Mat {
    let mut acc = Mat::zeros(m.d, m.d);
    for (j, pj) in p.iter().enumerate() {
        let w = m.trans[(i, j)];
        if w != 0.0 {
            add_scaled(&mut acc, w, pj);
        }
    }
    acc
}

/// `𝓔_i(P)` for every mode.
pub fn mode_expectations(m: &MjlsModel, p: &[Mat]) -> Vec<Mat> {
    (0..m.n_s).map(|i| mode_expectation(m, p, i)).collect()
}

/// One application of the coupled Lyapunov map:
/// `P_i ↦ Q_i + K_iᵀR_iK_i + φ_iᵀ𝓔_i(P)φ_i`.
pub fn lyapunov_rhs(m: &MjlsModel, policy: &Policy, p: &[Mat]) -> Vec<Mat> {
    let phis = m.closed_loop(policy);
    let weights = m.stage_weights(policy);
    lyapunov_map(m, &phis, &weights, p)
}

fn lyapunov_map(m: &MjlsModel, phis: &[Mat], weights: &[Mat], p: &[Mat]) -> Vec<Mat> {
    (0..m.n_s)
        .map(|i| {
            let e = mode_expectation(m, p, i);
            let phi = &phis[i];
            let mut next = &weights[i] + phi.tr_mul(&e) * phi;
            symmetrize(&mut next);
            next
        })
        .collect()
}

/// The mean-square closed-loop correlation operator
/// `T(X)_j = Σ_i p_ij φ_i X_i φ_iᵀ`.
pub fn correlation_operator(m: &MjlsModel, phis: &[Mat], x: &[Mat]) -> Vec<Mat> {
    let pushed: Vec<Mat> = phis
        .iter()
        .zip(x)
        .map(|(phi, xi)| phi * xi * phi.transpose())
        .collect();
    (0..m.n_s)
        .map(|j| {
            let mut acc = Mat::zeros(m.d, m.d);
            for (i, yi) in pushed.iter().enumerate() {
                let w = m.trans[(i, j)];
                if w != 0.0 {
                    add_scaled(&mut acc, w, yi);
                }
            }
            symmetrize(&mut acc);
            acc
        })
        .collect()
}

/// One application of the correlation recurrence
/// `S_j ↦ ρ_j·sigma0 + Σ_i p_ij φ_i S_i φ_iᵀ`.
pub fn correlation_rhs(m: &MjlsModel, policy: &Policy, s: &[Mat]) -> Vec<Mat> {
    let phis = m.closed_loop(policy);
    let mut next = correlation_operator(m, &phis, s);
    for (j, n) in next.iter_mut().enumerate() {
        add_scaled(n, m.rho[j], &m.sigma0);
    }
    next
}

/// One value-iteration step of the coupled Riccati equations:
/// `P_i ↦ Q_i + A_iᵀ𝓔_iA_i − A_iᵀ𝓔_iB_i(R_i + B_iᵀ𝓔_iB_i)⁻¹B_iᵀ𝓔_iA_i`.
pub fn riccati_rhs(m: &MjlsModel, p: &[Mat]) -> Result<Vec<Mat>> {
    (0..m.n_s)
        .map(|i| {
            let e = mode_expectation(m, p, i);
            let (a, b) = (&m.a[i], &m.b[i]);
            let bt_e = b.tr_mul(&e);
            let psi = &m.r[i] + &bt_e * b;
            let h = &bt_e * a;
            let gain = spd_solve(&psi, &h)?;
            let mut next = &m.q[i] + a.tr_mul(&e) * a - h.tr_mul(&gain);
            symmetrize(&mut next);
            Ok(next)
        })
        .collect()
}

/// Gains `K_i = (R_i + B_iᵀ𝓔_i(P)B_i)⁻¹B_iᵀ𝓔_i(P)A_i` that are greedy with respect
/// to `P`; at the Riccati solution these are the optimal gains.
pub fn greedy_gains(m: &MjlsModel, p: &[Mat]) -> Result<Policy> {
    let gains = (0..m.n_s)
        .map(|i| {
            let e = mode_expectation(m, p, i);
            let bt_e = m.b[i].tr_mul(&e);
            let psi = &m.r[i] + &bt_e * &m.b[i];
            spd_solve(&psi, &(&bt_e * &m.a[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Policy::new(gains))
}

fn tuple_norm(x: &[Mat]) -> f64 {
    libm::sqrt(x.iter().map(|m| m.norm_squared()).sum::<f64>())
}

/// Max over blocks of `‖x_i − f_i‖_F / (1 + ‖f_i‖_F)`.
pub fn relative_residual(x: &[Mat], fx: &[Mat]) -> f64 {
    x.iter()
        .zip(fx)
        .map(|(a, b)| (a - b).norm() / (1.0 + b.norm()))
        .fold(0.0, f64::max)
}

fn absolute_residual(x: &[Mat], fx: &[Mat]) -> f64 {
    x.iter()
        .zip(fx)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

enum Divergence {
    Unstable,
    Unstabilizable,
}

impl Divergence {
    fn error(&self, iterations: usize) -> Error {
        match self {
            Divergence::Unstable => Error::NotMsStable { iterations },
            Divergence::Unstabilizable => Error::NotMsStabilizable { iterations },
        }
    }
}

struct FixedPoint {
    value: Vec<Mat>,
    residual: f64,
    iterations: usize,
}

/// Iterates `x ↦ map(x)` until the relative residual of the current iterate
/// drops to `cfg.tol`; returns that iterate.
fn fixed_point<F>(
    init: Vec<Mat>,
    reference_norm: f64,
    cfg: &SolverConfig,
    divergence: Divergence,
    mut map: F,
) -> Result<FixedPoint>
where
    F: FnMut(&[Mat]) -> Result<Vec<Mat>>,
{
    cfg.validate()?;
    let cap = DIVERGENCE_CAP * reference_norm.max(1.0);
    let mut x = init;
    let mut checkpoints: Vec<f64> = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let next = map(&x)?;
        residual = relative_residual(&x, &next);
        if residual <= cfg.tol {
            return Ok(FixedPoint {
                value: x,
                residual,
                iterations: it,
            });
        }
        let norm = tuple_norm(&next);
        if !norm.is_finite() || norm > cap {
            return Err(divergence.error(it + 1));
        }
        if it % DIVERGENCE_WINDOW == 0 {
            checkpoints.push(absolute_residual(&x, &next));
            let n = checkpoints.len();
            if n > DIVERGENCE_STREAK
                && checkpoints[n - DIVERGENCE_STREAK - 1..]
                    .windows(2)
                    .all(|w| w[1] > w[0])
            {
                return Err(divergence.error(it + 1));
            }
        }
        x = next;
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        residual,
    })
}

/// Solves the coupled Lyapunov equations
/// `P_i = Q_i + K_iᵀR_iK_i + φ_iᵀ𝓔_i(P)φ_i` by fixed-point iteration from `P = 0`.
///
/// The iteration converges exactly when the policy is mean-square stabilizing;
/// divergence is reported as [`Error::NotMsStable`].
pub fn solve_coupled_lyapunov(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<CoupledValue> {
    solve_coupled_lyapunov_from(m, policy, cfg, None)
}

/// [`solve_coupled_lyapunov`] started from `init` instead of zero.
pub fn solve_coupled_lyapunov_from(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
    init: Option<Vec<Mat>>,
) -> Result<CoupledValue> {
    m.check_policy(policy)?;
    let phis = m.closed_loop(policy);
    let weights = m.stage_weights(policy);
    let reference = tuple_norm(&weights);
    let init = init.unwrap_or_else(|| (0..m.n_s).map(|_| Mat::zeros(m.d, m.d)).collect());
    let fp = fixed_point(init, reference, cfg, Divergence::Unstable, |p| {
        Ok(lyapunov_map(m, &phis, &weights, p))
    })?;
    Ok(CoupledValue {
        p: fp.value,
        residual: fp.residual,
        iterations: fp.iterations,
    })
}

/// Solves `S_j = ρ_j·sigma0 + Σ_i p_ij φ_i S_i φ_iᵀ` from `S = X(0)`.
pub fn solve_state_correlation(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<StateCorrelation> {
    solve_state_correlation_from(m, policy, cfg, None)
}

/// [`solve_state_correlation`] started from `init` instead of `X(0)`.
pub fn solve_state_correlation_from(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
    init: Option<Vec<Mat>>,
) -> Result<StateCorrelation> {
    m.check_policy(policy)?;
    let phis = m.closed_loop(policy);
    let initial: Vec<Mat> = m.rho.iter().map(|&r| &m.sigma0 * r).collect();
    let reference = tuple_norm(&initial);
    let start = init.unwrap_or_else(|| initial.clone());
    let fp = fixed_point(start, reference, cfg, Divergence::Unstable, |s| {
        let mut next = correlation_operator(m, &phis, s);
        for (n, x0) in next.iter_mut().zip(&initial) {
            *n += x0;
        }
        Ok(next)
    })?;
    Ok(StateCorrelation {
        s: fp.value,
        residual: fp.residual,
        iterations: fp.iterations,
    })
}

/// Solves the coupled Riccati equations by value iteration from `P = Q` and
/// returns `{P_i*}` with the optimal gains.
pub fn solve_coupled_riccati(m: &MjlsModel, cfg: &SolverConfig) -> Result<(CoupledValue, Policy)> {
    let reference = tuple_norm(&m.q);
    let fp = fixed_point(
        m.q.clone(),
        reference,
        cfg,
        Divergence::Unstabilizable,
        |p| riccati_rhs(m, p),
    )?;
    let gains = greedy_gains(m, &fp.value)?;
    Ok((
        CoupledValue {
            p: fp.value,
            residual: fp.residual,
            iterations: fp.iterations,
        },
        gains,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusEstimate {
    pub radius: f64,
    pub iterations: usize,
}

/// Spectral radius of the closed-loop correlation operator, by power
/// iteration on tuples of symmetric matrices from `X_i = I`.
///
/// The policy is mean-square stabilizing iff the radius is below one.
pub fn ms_spectral_radius(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<RadiusEstimate> {
    ms_spectral_radius_from(m, policy, cfg, None).map(|(est, _)| est)
}

/// Power iteration from a given positive semidefinite tuple (identities when
/// `None`); also returns the final normalized iterate for warm starts.
pub fn ms_spectral_radius_from(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
    start: Option<Vec<Mat>>,
) -> Result<(RadiusEstimate, Vec<Mat>)> {
    m.check_policy(policy)?;
    cfg.validate()?;
    let phis = m.closed_loop(policy);
    let mut x: Vec<Mat> =
        start.unwrap_or_else(|| (0..m.n_s).map(|_| Mat::identity(m.d, m.d)).collect());
    let n0 = tuple_norm(&x);
    x.iter_mut().for_each(|xi| *xi /= n0);

    let plain_budget = (cfg.power_iter_max / 2).clamp(1, 2000);
    let (estimate, x) = match power_loop(m, &phis, x, 0.0, plain_budget, cfg.power_iter_tol)? {
        PowerOutcome::Done(est, y) => return Ok((est, y)),
        PowerOutcome::Stalled(estimate, x) => (estimate, x),
    };
    // The peripheral spectrum can hold several eigenvalues of modulus ρ (for
    // instance λ² and |λ|² for a complex pair λ). Shifting by α > 0 leaves
    // ρ + α as the only dominant eigenvalue.
    let shift = estimate;
    let rest = cfg.power_iter_max - plain_budget;
    match power_loop(m, &phis, x, shift, rest, cfg.power_iter_tol)? {
        PowerOutcome::Done(est, y) => Ok((
            RadiusEstimate {
                radius: (est.radius - shift).max(0.0),
                iterations: est.iterations + plain_budget,
            },
            y,
        )),
        PowerOutcome::Stalled(estimate, _) => Err(Error::RadiusNotConverged {
            estimate: estimate - shift,
            iterations: cfg.power_iter_max,
        }),
    }
}

enum PowerOutcome {
    Done(RadiusEstimate, Vec<Mat>),
    Stalled(f64, Vec<Mat>),
}

/// Power iteration on `X ↦ T(X) + shift·X`.
fn power_loop(
    m: &MjlsModel,
    phis: &[Mat],
    mut x: Vec<Mat>,
    shift: f64,
    max_iter: usize,
    tol: f64,
) -> Result<PowerOutcome> {
    let mut prev = f64::NAN;
    let mut prev_delta = f64::NAN;
    let mut estimate = f64::NAN;
    for it in 1..=max_iter {
        let mut y = correlation_operator(m, phis, &x);
        if shift > 0.0 {
            for (yi, xi) in y.iter_mut().zip(&x) {
                add_scaled(yi, shift, xi);
            }
        }
        estimate = tuple_norm(&y);
        if estimate == 0.0 {
            // T(I) = 0 already forces T = 0 on the PSD cone
            let est = RadiusEstimate {
                radius: 0.0,
                iterations: it,
            };
            return Ok(PowerOutcome::Done(est, x));
        }
        if !estimate.is_finite() {
            return Err(Error::RadiusNotConverged {
                estimate,
                iterations: it,
            });
        }
        let delta = (estimate - prev).abs();
        y.iter_mut().for_each(|yi| *yi /= estimate);
        let est = RadiusEstimate {
            radius: estimate,
            iterations: it,
        };
        if delta == 0.0 {
            return Ok(PowerOutcome::Done(est, y));
        }
        if prev_delta.is_finite() && prev_delta > 0.0 {
            // geometric tail estimate of the remaining error
            let q = (delta / prev_delta).min(1.0);
            let remaining = if q < 1.0 {
                delta * q / (1.0 - q)
            } else {
                f64::INFINITY
            };
            // near round-off the ratio is noise, so the tail test is dropped
            let at_floor = delta <= 64.0 * f64::EPSILON * estimate;
            if delta <= tol * estimate && (remaining <= tol * estimate || at_floor) {
                return Ok(PowerOutcome::Done(est, y));
            }
        }
        prev_delta = delta;
        prev = estimate;
        x = y;
    }
    Ok(PowerOutcome::Stalled(estimate, x))
}

/// Outcome of a mean-square stability test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    pub stable: bool,
    pub radius: f64,
    /// `1 − radius`.
    pub margin: f64,
}

/// Strict threshold below one that the radius must clear.
pub const STABILITY_THRESHOLD: f64 = 1.0 - 1e-10;

pub fn is_ms_stabilizing(
    m: &MjlsModel,
    policy: &Policy,
    cfg: &SolverConfig,
) -> Result<StabilityCheck> {
    let est = ms_spectral_radius(m, policy, cfg)?;
    Ok(StabilityCheck {
        stable: est.radius < STABILITY_THRESHOLD,
        radius: est.radius,
        margin: 1.0 - est.radius,
    })
}
