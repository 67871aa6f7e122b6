//! Slow, independent reference computations used to validate the fast paths:
//! Monte-Carlo rollouts, dense Kronecker solves, the dense mean-square radius,
//! the classical single-mode LQR path, and finite-difference gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{cholesky_factor, spd_solve, sym_min_eig, symmetrize, trace_of_product};
use crate::model::{CoupledValue, MjlsModel, Policy};
use crate::policy_opt::cost_from_value;
use crate::stability::{
    lyapunov_rhs, ms_spectral_radius, relative_residual, solve_coupled_lyapunov, SolverConfig,
};
use crate::{Error, Mat, Result, Vector};

/// Largest `n_s·d²` for which the dense vectorized operators are assembled.
pub const DENSE_LIMIT: usize = 4000;

fn dense_guard(m: &MjlsModel) -> Result<usize> {
    let size = m.n_s * m.d * m.d;
    if size > DENSE_LIMIT {
        return Err(Error::DenseGuard {
            size,
            limit: DENSE_LIMIT,
        });
    }
    Ok(size)
}

/// Solves the coupled Lyapunov equations directly:
/// `(I − M) vec(P) = vec(Q + KᵀRK)` with block `M(i,j) = p_ij (φ_iᵀ ⊗ φ_iᵀ)`.
///
/// A positive definite solution certifies mean-square stability; anything
/// else is reported as [`Error::NotMsStable`].
pub fn dense_coupled_lyapunov(m: &MjlsModel, policy: &Policy) -> Result<CoupledValue> {
    m.check_policy(policy)?;
    let n = dense_guard(m)?;
    let dd = m.d * m.d;
    let phis = m.closed_loop(policy);
    let weights = m.stage_weights(policy);

    let mut system = Mat::identity(n, n);
    for (i, phi) in phis.iter().enumerate() {
        let kron = phi.transpose().kronecker(&phi.transpose());
        for j in 0..m.n_s {
            let p = m.trans[(i, j)];
            if p != 0.0 {
                let mut block = system.view_mut((i * dd, j * dd), (dd, dd));
                block -= &kron * p;
            }
        }
    }
    let mut rhs = Vector::zeros(n);
    for (i, w) in weights.iter().enumerate() {
        rhs.rows_mut(i * dd, dd).copy_from_slice(w.as_slice());
    }
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("coupled Lyapunov system (policy not MS-stable)".into()))?;

    let mut p = Vec::with_capacity(m.n_s);
    for i in 0..m.n_s {
        let mut block =
            Mat::from_column_slice(m.d, m.d, &solution.as_slice()[i * dd..(i + 1) * dd]);
        symmetrize(&mut block);
        if !(sym_min_eig(&block) > 0.0) {
            return Err(Error::NotMsStable { iterations: 0 });
        }
        p.push(block);
    }
    let residual = relative_residual(&p, &lyapunov_rhs(m, policy, &p));
    Ok(CoupledValue {
        p,
        residual,
        iterations: 0,
    })
}

/// Largest eigenvalue modulus of the dense `n_s·d² × n_s·d²` operator with
/// block `(j, i) = p_ij (φ_i ⊗ φ_i)`.
pub fn dense_ms_radius(m: &MjlsModel, policy: &Policy) -> Result<f64> {
    m.check_policy(policy)?;
    let n = dense_guard(m)?;
    let dd = m.d * m.d;
    let mut lambda = Mat::zeros(n, n);
    for (i, phi) in m.closed_loop(policy).iter().enumerate() {
        let kron = phi.kronecker(phi);
        for j in 0..m.n_s {
            let p = m.trans[(i, j)];
            if p != 0.0 {
                lambda
                    .view_mut((j * dd, i * dd), (dd, dd))
                    .copy_from(&(&kron * p));
            }
        }
    }
    Ok(lambda
        .complex_eigenvalues()
        .iter()
        .map(|c| libm::hypot(c.re, c.im))
        .fold(0.0, f64::max))
}

/// Law of the initial state used by [`mc_cost`].
#[derive(Debug, Clone, PartialEq)]
pub enum X0Law {
    /// `x₀ ~ N(0, sigma0)`.
    Gaussian,
    /// `x₀ = √d · L u` with `u` uniform on the unit sphere and `LLᵀ = sigma0`;
    /// same second moment as the Gaussian law.
    UnitSphereScaled,
    /// Deterministic `x₀` (its second moment is `x₀x₀ᵀ`, not `sigma0`).
    Fixed(Vector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub seed: u64,
    pub x0_law: X0Law,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    /// `estimate · r^horizon / (1 − r)` with `r` the mean-square radius;
    /// infinite when `r ≥ 1`.
    pub truncation_bound: f64,
}

fn sample_index<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Monte-Carlo estimate of the truncated cost `E Σ_{t<horizon} x_tᵀQx_t + u_tᵀRu_t`.
///
/// Rollout `r` uses its own generator seeded with `seed + r`. No stability
/// check is made; for a non-stabilizing policy the estimate blows up.
pub fn mc_cost(m: &MjlsModel, policy: &Policy, cfg: &McConfig) -> Result<McEstimate> {
    m.check_policy(policy)?;
    if cfg.n_rollouts == 0 || cfg.horizon == 0 {
        return Err(Error::InvalidArgument(
            "n_rollouts and horizon must be at least 1".into(),
        ));
    }
    let chol = cholesky_factor(&m.sigma0)
        .ok_or_else(|| Error::InvalidArgument("sigma0 is not positive definite".into()))?;
    if let X0Law::Fixed(x) = &cfg.x0_law {
        if x.len() != m.d {
            return Err(Error::InvalidArgument(
                "fixed x0 has the wrong length".into(),
            ));
        }
    }

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 0..cfg.n_rollouts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
        let mut mode = sample_index(&mut rng, m.rho.iter().copied());
        let mut x = match &cfg.x0_law {
            X0Law::Fixed(x) => x.clone(),
            X0Law::Gaussian => {
                &chol * Vector::from_fn(m.d, |_, _| rng.sample::<f64, _>(StandardNormal))
            }
            X0Law::UnitSphereScaled => {
                let mut z = Vector::from_fn(m.d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = z.norm();
                z /= norm;
                &chol * z * libm::sqrt(m.d as f64)
            }
        };
        let mut total = 0.0;
        for _ in 0..cfg.horizon {
            let u = -(&policy.gains[mode] * &x);
            total += x.dot(&(&m.q[mode] * &x)) + u.dot(&(&m.r[mode] * &u));
            x = &m.a[mode] * &x + &m.b[mode] * &u;
            mode = sample_index(&mut rng, m.trans.row(mode).iter().copied());
        }
        sum += total;
        sum_sq += total * total;
    }
    let n = cfg.n_rollouts as f64;
    let estimate = sum / n;
    let standard_error = if cfg.n_rollouts > 1 {
        let var = ((sum_sq - n * estimate * estimate) / (n - 1.0)).max(0.0);
        libm::sqrt(var / n)
    } else {
        0.0
    };
    let radius = ms_spectral_radius(m, policy, &SolverConfig::default())?.radius;
    let truncation_bound = if radius < 1.0 {
        estimate.abs() * libm::pow(radius, cfg.horizon as f64) / (1.0 - radius)
    } else {
        f64::INFINITY
    };
    Ok(McEstimate {
        estimate,
        standard_error,
        truncation_bound,
    })
}

fn oracle_cost(m: &MjlsModel, policy: &Policy, cfg: &SolverConfig) -> Result<f64> {
    let value = if m.n_s * m.d * m.d <= DENSE_LIMIT {
        dense_coupled_lyapunov(m, policy)?
    } else {
        solve_coupled_lyapunov(m, policy, cfg)?
    };
    Ok(cost_from_value(m, &value.p))
}

/// Central finite differences of the cost over every entry of every gain.
///
/// Costs come from the dense Kronecker solve when it fits under
/// [`DENSE_LIMIT`], otherwise from the fixed-point solver.
pub fn fd_gradient(m: &MjlsModel, policy: &Policy, h: f64, cfg: &SolverConfig) -> Result<Vec<Mat>> {
    m.check_policy(policy)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "step h must be positive, got {h}"
        )));
    }
    let mut grads = Vec::with_capacity(m.n_s);
    let mut probe = policy.clone();
    for mode in 0..m.n_s {
        let mut g = Mat::zeros(m.k, m.d);
        for row in 0..m.k {
            for col in 0..m.d {
                let base = policy.gains[mode][(row, col)];
                let mut eval = |delta: f64| {
                    probe.gains[mode][(row, col)] = base + delta;
                    let c = oracle_cost(m, &probe, cfg);
                    probe.gains[mode][(row, col)] = base;
                    match c {
                        Ok(c) => Ok(c),
                        Err(Error::NotMsStable { .. })
                        | Err(Error::Singular(_))
                        | Err(Error::NotConverged { .. }) => {
                            Err(Error::FdUnstable { mode, row, col })
                        }
                        Err(e) => Err(e),
                    }
                };
                let plus = eval(h)?;
                let minus = eval(-h)?;
                g[(row, col)] = (plus - minus) / (2.0 * h);
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// `‖a − b‖_F / (1 + ‖b‖_F)` over stacked blocks.
pub fn relative_discrepancy(a: &[Mat], b: &[Mat]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    let scale: f64 = b.iter().map(|y| y.norm_squared()).sum();
    libm::sqrt(diff) / (1.0 + libm::sqrt(scale))
}

/// Classical single-mode LQR computed along a separate path: the discrete
/// algebraic Riccati equation by structure-preserving doubling, and policy
/// values by dense Kronecker solves.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiLqr {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    pub sigma0: Mat,
    /// Stabilizing solution of the DARE.
    pub p: Mat,
    /// Optimal gain `(R + BᵀPB)⁻¹BᵀPA`.
    pub k: Mat,
}

const DOUBLING_MAX: usize = 200;

/// Solves `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` by doubling.
pub fn lti_lqr_reference(a: &Mat, b: &Mat, q: &Mat, r: &Mat, sigma0: &Mat) -> Result<LtiLqr> {
    let d = a.nrows();
    let not_stabilizable = |it| Error::NotMsStabilizable { iterations: it };
    let mut ak = a.clone();
    let mut g = b * spd_solve(r, &b.transpose())?;
    let mut h = q.clone();
    let identity = Mat::identity(d, d);
    let mut converged = false;
    for it in 0..DOUBLING_MAX {
        let lu = (&identity + &g * &h).lu();
        let w_a = lu.solve(&ak).ok_or_else(|| not_stabilizable(it))?;
        let w_g = lu.solve(&g).ok_or_else(|| not_stabilizable(it))?;
        let mut h_next = &h + ak.tr_mul(&(&h * &w_a));
        let mut g_next = &g + &ak * &w_g * ak.transpose();
        symmetrize(&mut h_next);
        symmetrize(&mut g_next);
        let a_next = &ak * &w_a;
        if !h_next.iter().all(|v| v.is_finite()) || h_next.norm() > 1e12 * (1.0 + q.norm()) {
            return Err(not_stabilizable(it));
        }
        let change = (&h_next - &h).norm();
        h = h_next;
        g = g_next;
        ak = a_next;
        if change <= 1e-15 * (1.0 + h.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(not_stabilizable(DOUBLING_MAX));
    }
    let bt_p = b.tr_mul(&h);
    let k = spd_solve(&(r + &bt_p * b), &(&bt_p * a))?;
    Ok(LtiLqr {
        a: a.clone(),
        b: b.clone(),
        q: q.clone(),
        r: r.clone(),
        sigma0: sigma0.clone(),
        p: h,
        k,
    })
}

fn dense_stein(phi_left: &Mat, rhs: &Mat) -> Result<Mat> {
    // X = rhs + φ X φᵀ in column-major vec form: (I − φ⊗φ) vec X = vec rhs
    let d = rhs.nrows();
    let system = Mat::identity(d * d, d * d) - phi_left.kronecker(phi_left);
    let v = system
        .lu()
        .solve(&Vector::from_column_slice(rhs.as_slice()))
        .ok_or_else(|| Error::Singular("Stein equation".into()))?;
    let mut x = Mat::from_column_slice(d, d, v.as_slice());
    symmetrize(&mut x);
    if !(sym_min_eig(&x) > 0.0) {
        return Err(Error::NotMsStable { iterations: 0 });
    }
    Ok(x)
}

impl LtiLqr {
    /// `P_K` solving `P = Q + KᵀRK + (A − BK)ᵀP(A − BK)`.
    pub fn value_of(&self, k: &Mat) -> Result<Mat> {
        let phi = &self.a - &self.b * k;
        dense_stein(&phi.transpose(), &(&self.q + k.tr_mul(&(&self.r * k))))
    }

    /// `Σ_K` solving `Σ = sigma0 + (A − BK)Σ(A − BK)ᵀ`.
    pub fn correlation_of(&self, k: &Mat) -> Result<Mat> {
        dense_stein(&(&self.a - &self.b * k), &self.sigma0)
    }

    /// `C(K) = tr(P_K sigma0)`.
    pub fn cost_of(&self, k: &Mat) -> Result<f64> {
        Ok(trace_of_product(&self.value_of(k)?, &self.sigma0))
    }

    /// `∇C(K) = 2((R + BᵀP_KB)K − BᵀP_KA)Σ_K`.
    pub fn gradient_of(&self, k: &Mat) -> Result<Mat> {
        let p = self.value_of(k)?;
        let sigma = self.correlation_of(k)?;
        let bt_p = self.b.tr_mul(&p);
        Ok(((&self.r + &bt_p * &self.b) * k - bt_p * &self.a) * sigma * 2.0)
    }

    /// Optimal cost `tr(P sigma0)`.
    pub fn optimal_cost(&self) -> f64 {
        trace_of_product(&self.p, &self.sigma0)
    }
}
