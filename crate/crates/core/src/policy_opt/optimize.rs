use alloc::vec::Vec;

use super::checks::{
    contraction, domination_check, lower_bound_check, smoothness_check, smoothness_rhs,
    DominationCheck, LowerBoundCheck, SmoothnessCheck,
};
use super::steps::{gauss_newton_from, natural_from, npg_stable_step, vanilla_from};
use super::{
    cost_from_value, curvature_blocks, gain_residuals, gradient_from_parts, max_step, mu, Method,
    OptimalSolution,
};
use crate::model::{MjlsModel, Policy};
use crate::stability::{
    ms_spectral_radius_from, solve_coupled_lyapunov_from, solve_state_correlation_from,
    SolverConfig, STABILITY_THRESHOLD,
};
use crate::{Error, Mat, Result};

/// How the optimizer picks `η` each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Largest certified step at every iterate: `1/2` for Gauss-Newton and
    /// `1/(2‖R̂ + B̂ᵀ𝓔̂(P)B̂‖)` for natural PG.
    Auto,
    /// The fixed worst-case step from [`max_step`] evaluated at the start.
    Conservative,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub eta: StepSize,
    pub max_iters: usize,
    /// Stop once `(C − C*)/C* ≤ rel_gap_tol`, or, without a reference,
    /// once `‖∇C‖_F ≤ rel_gap_tol·(1 + C)`.
    pub rel_gap_tol: f64,
    /// When positive and the optimum is known, convergence additionally
    /// requires `‖∇C‖_F ≤ grad_tol·(1 + C)`; the cost gap alone cannot resolve
    /// gains much below the square root of round-off.
    pub grad_tol: f64,
    /// Evaluate the convergence inequality checks along the run.
    pub record_checks: bool,
    pub solver: SolverConfig,
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            eta: StepSize::Auto,
            max_iters: 1000,
            rel_gap_tol: 1e-10,
            grad_tol: 0.0,
            record_checks: false,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "step size must be positive, got {eta}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.rel_gap_tol >= 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidArgument(
                "rel_gap_tol and grad_tol must be >= 0".into(),
            ));
        }
        self.solver.validate()
    }
}

/// Inequality checks evaluated at one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityChecks {
    /// Expansion of the cost change from the previous iterate (absent at 0).
    pub smoothness: Option<SmoothnessCheck>,
    /// Needs the optimum.
    pub domination: Option<DominationCheck>,
    pub lower_bound: LowerBoundCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub ms_radius: f64,
    /// Step size that produced this iterate; NaN at iteration 0.
    pub eta: f64,
    /// Whether that step was certified (true at iteration 0).
    pub certified: bool,
    /// `(C(K̂ⁿ) − C*) − (1 − contraction)(C(K̂ⁿ⁻¹) − C*)`; NaN when not applicable.
    pub rate_residual: f64,
    /// `(C − C*)/C*` when the optimum is known.
    pub rel_gap: Option<f64>,
    pub checks: Option<InequalityChecks>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Converged,
    MaxIters,
    /// An iterate left the mean-square stabilizing set.
    LeftStableSet {
        iter: usize,
        certified_step: bool,
    },
    /// A solve failed to converge mid-run.
    SolverFailure {
        iter: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub method: Method,
    pub records: Vec<IterationRecord>,
    /// Last stabilizing iterate.
    pub final_policy: Policy,
    /// Final `(C − C*)/C*` when the optimum was supplied.
    pub final_gap: Option<f64>,
    pub optimal_cost: Option<f64>,
    pub mu: f64,
    /// Every step was certified.
    pub certified: bool,
    pub termination: Termination,
    /// Iterations whose cost did not decrease before the tolerance was met.
    pub non_descent: Vec<usize>,
}

impl ConvergenceReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    /// Vanilla policy gradient carries no mean-square convergence guarantee.
    pub fn has_guarantee(&self) -> bool {
        self.method != Method::VanillaPg
    }

    /// First iteration at which the relative gap is at most `threshold`.
    pub fn first_iter_below(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.rel_gap.is_some_and(|g| g <= threshold))
            .map(|r| r.iter)
    }
}

struct Iterate {
    policy: Policy,
    cost: f64,
    residuals: Vec<Mat>,
    curvature: Vec<Mat>,
}

/// Runs the selected method from `initial` until the stopping rule fires.
///
/// `initial` must be mean-square stabilizing. A later iterate that leaves the
/// stabilizing set ends the run with [`Termination::LeftStableSet`] rather
/// than an error.
pub fn optimize(
    m: &MjlsModel,
    initial: &Policy,
    cfg: &OptimizerConfig,
    reference: Option<&OptimalSolution>,
) -> Result<ConvergenceReport> {
    optimize_with(m, initial, cfg, reference, |_| {})
}

/// [`optimize`] with a callback invoked on every recorded iterate.
pub fn optimize_with<F>(
    m: &MjlsModel,
    initial: &Policy,
    cfg: &OptimizerConfig,
    reference: Option<&OptimalSolution>,
    mut on_iter: F,
) -> Result<ConvergenceReport>
where
    F: FnMut(&IterationRecord),
{
    cfg.validate()?;
    m.check_policy(initial)?;
    let solver = &cfg.solver;
    let mu = mu(m);

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut non_descent = Vec::new();
    let mut all_certified = true;
    let mut policy = initial.clone();
    let mut prev: Option<Iterate> = None;
    let mut step_eta = f64::NAN;
    let mut step_certified = true;
    let mut fixed_eta: Option<(f64, bool)> = None;
    let mut termination = Termination::MaxIters;
    // solves after the first start from the previous iterate's solutions
    let mut warm_eigvec: Option<Vec<Mat>> = None;
    let mut warm_value: Option<Vec<Mat>> = None;
    let mut warm_corr: Option<Vec<Mat>> = None;

    for n in 0..=cfg.max_iters {
        let radius = match ms_spectral_radius_from(m, &policy, solver, warm_eigvec.take()) {
            Ok((r, eigvec)) => {
                warm_eigvec = Some(eigvec);
                r.radius
            }
            Err(Error::RadiusNotConverged { estimate, .. }) if n > 0 => estimate,
            Err(e) => return Err(e),
        };
        let left_set = |certified_step| Termination::LeftStableSet {
            iter: n,
            certified_step,
        };
        if !(radius < STABILITY_THRESHOLD) {
            if n == 0 {
                return Err(Error::NotMsStable { iterations: 0 });
            }
            termination = left_set(step_certified);
            break;
        }
        let solved =
            solve_coupled_lyapunov_from(m, &policy, solver, warm_value.take()).and_then(|v| {
                Ok((
                    v,
                    solve_state_correlation_from(m, &policy, solver, warm_corr.take())?,
                ))
            });
        let (value, corr) = match solved {
            Ok(v) => v,
            Err(e) if n == 0 => return Err(e),
            Err(Error::NotMsStable { .. }) => {
                termination = left_set(step_certified);
                break;
            }
            Err(_) => {
                termination = Termination::SolverFailure { iter: n };
                break;
            }
        };

        let cost = cost_from_value(m, &value.p);
        warm_value = Some(value.p.clone());
        warm_corr = Some(corr.s.clone());
        let curvature = curvature_blocks(m, &value.p);
        let bundle = gradient_from_parts(gain_residuals(m, &policy, &value), &corr);
        let rel_gap = reference.map(|r| (cost - r.cost) / r.cost);

        let rate_residual = match (reference, &prev) {
            (Some(r), Some(p)) if step_certified => {
                contraction(m, cfg.method, step_eta, r.chi_norm).map_or(f64::NAN, |c| {
                    (cost - r.cost) - (1.0 - c) * (p.cost - r.cost)
                })
            }
            _ => f64::NAN,
        };

        let checks = if cfg.record_checks {
            let smoothness = prev.as_ref().map(|p| {
                let rhs = smoothness_rhs(&p.policy, &p.residuals, &p.curvature, &policy, &corr.s);
                smoothness_check(cost - p.cost, rhs)
            });
            let domination = match reference {
                Some(r) => Some(domination_check(
                    m,
                    cost,
                    &bundle.l,
                    &curvature,
                    bundle.grad_norm,
                    r.cost,
                    r.chi_norm,
                )?),
                None => None,
            };
            Some(InequalityChecks {
                smoothness,
                domination,
                lower_bound: lower_bound_check(m, &value.p),
            })
        } else {
            None
        };

        let done = match rel_gap {
            Some(g) => {
                g <= cfg.rel_gap_tol
                    && (cfg.grad_tol == 0.0 || bundle.grad_norm <= cfg.grad_tol * (1.0 + cost))
            }
            None => bundle.grad_norm <= cfg.rel_gap_tol * (1.0 + cost),
        };
        let within_gap = match rel_gap {
            Some(g) => g <= cfg.rel_gap_tol,
            None => done,
        };
        if let Some(p) = &prev {
            if !(cost < p.cost) && !within_gap {
                non_descent.push(n);
            }
        }
        records.push(IterationRecord {
            iter: n,
            cost,
            grad_norm: bundle.grad_norm,
            ms_radius: radius,
            eta: step_eta,
            certified: step_certified,
            rate_residual,
            rel_gap,
            checks,
        });
        on_iter(&records[records.len() - 1]);
        if done {
            termination = Termination::Converged;
            break;
        }
        if n == cfg.max_iters {
            break;
        }

        let (eta, certified) = match (cfg.eta, cfg.method) {
            (StepSize::Auto, Method::GaussNewton) => (0.5, true),
            (StepSize::Auto, Method::NaturalPg) => (npg_stable_step(&curvature), true),
            (StepSize::Fixed(eta), Method::GaussNewton) => (eta, eta <= 0.5),
            (StepSize::Fixed(eta), Method::NaturalPg) => (eta, eta <= npg_stable_step(&curvature)),
            (StepSize::Fixed(eta), Method::VanillaPg) => (eta, false),
            (StepSize::Conservative, _) | (StepSize::Auto, Method::VanillaPg) => {
                let (eta, certified) = match fixed_eta {
                    Some(v) => v,
                    None => {
                        let bound = max_step(m, cost, cfg.method)?;
                        let v = (bound.eta, bound.certified);
                        fixed_eta = Some(v);
                        v
                    }
                };
                // the worst-case step stays certified only while the cost
                // has not risen above its starting value
                (eta, certified && cost <= records[0].cost)
            }
        };
        let next = match cfg.method {
            Method::GaussNewton => gauss_newton_from(&policy, &curvature, &bundle.l, eta)?,
            Method::NaturalPg => natural_from(&policy, &bundle.l, eta),
            Method::VanillaPg => vanilla_from(&policy, &bundle.grad, eta),
        };
        step_eta = eta;
        step_certified = certified;
        all_certified &= certified;
        prev = Some(Iterate {
            policy: core::mem::replace(&mut policy, next),
            cost,
            residuals: bundle.l,
            curvature,
        });
    }

    let final_policy = match termination {
        Termination::LeftStableSet { .. } | Termination::SolverFailure { .. } => {
            prev.map(|p| p.policy).unwrap_or(policy)
        }
        _ => policy,
    };
    Ok(ConvergenceReport {
        method: cfg.method,
        final_gap: records.last().and_then(|r| r.rel_gap),
        optimal_cost: reference.map(|r| r.cost),
        records,
        final_policy,
        mu,
        certified: all_certified && cfg.method != Method::VanillaPg,
        termination,
        non_descent,
    })
}
