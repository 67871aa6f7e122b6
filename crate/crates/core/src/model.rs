//! Problem instances, policies, and the value/correlation tuples the solvers
//! produce.

use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::linalg::{asymmetry, spectral_norm, sym_min_eig};
use crate::stability::{ms_spectral_radius, SolverConfig};
use crate::{Error, Mat, Result, Vector};

/// Tolerance on row sums of the transition matrix and on `Σρ = 1`.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Minimum eigenvalue a matrix must exceed to count as positive definite.
pub const PD_TOL: f64 = 1e-10;
/// Tolerance on `max |m - mᵀ|`, relative to `1 + max |m|`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A Markovian jump linear system with quadratic cost:
///
/// `x_{t+1} = A_{ω(t)} x_t + B_{ω(t)} u_t`, cost `E Σ_t x_tᵀQ_{ω(t)}x_t + u_tᵀR_{ω(t)}u_t`,
/// where `ω` is a Markov chain with transition matrix `trans` and initial law
/// `rho`, and `sigma0 = E[x₀x₀ᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MjlsModel {
    /// Number of modes.
    pub n_s: usize,
    /// State dimension.
    pub d: usize,
    /// Input dimension.
    pub k: usize,
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub q: Vec<Mat>,
    pub r: Vec<Mat>,
    /// Row-stochastic; `trans[(i, j)]` is the probability of jumping from mode `i` to `j`.
    pub trans: Mat,
    pub rho: Vector,
    pub sigma0: Mat,
}

impl MjlsModel {
    /// Builds a model and rejects it unless [`validate_model`] is clean.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Vec<Mat>,
        b: Vec<Mat>,
        q: Vec<Mat>,
        r: Vec<Mat>,
        trans: Mat,
        rho: Vector,
        sigma0: Mat,
    ) -> Result<Self> {
        let n_s = a.len();
        let d = sigma0.nrows();
        let k = b.first().map_or(0, |b| b.ncols());
        let model = Self {
            n_s,
            d,
            k,
            a,
            b,
            q,
            r,
            trans,
            rho,
            sigma0,
        };
        let report = validate_model(&model);
        if report.is_valid() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    /// Closed-loop matrices `φ_i = A_i - B_i K_i`.
    pub fn closed_loop(&self, policy: &Policy) -> Vec<Mat> {
        self.a
            .iter()
            .zip(&self.b)
            .zip(&policy.gains)
            .map(|((a, b), k)| a - b * k)
            .collect()
    }

    /// Per-mode stage cost weights `Q_i + K_iᵀR_iK_i`.
    pub fn stage_weights(&self, policy: &Policy) -> Vec<Mat> {
        self.q
            .iter()
            .zip(&self.r)
            .zip(&policy.gains)
            .map(|((q, r), k)| q + k.tr_mul(&(r * k)))
            .collect()
    }

    /// `‖R̂‖ = max_i ‖R_i‖₂`.
    pub fn r_hat_norm(&self) -> f64 {
        self.r.iter().map(spectral_norm).fold(0.0, f64::max)
    }

    /// `σ_min(R̂) = min_i σ_min(R_i)`.
    pub fn r_hat_sigma_min(&self) -> f64 {
        self.r.iter().map(sym_min_eig).fold(f64::INFINITY, f64::min)
    }

    /// `‖B̂‖ = max_i ‖B_i‖₂`.
    pub fn b_hat_norm(&self) -> f64 {
        self.b.iter().map(spectral_norm).fold(0.0, f64::max)
    }

    /// `min_i λ_min(Q_i)`.
    pub fn q_hat_sigma_min(&self) -> f64 {
        self.q.iter().map(sym_min_eig).fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.gains.len() != self.n_s {
            return Err(Error::InvalidArgument(alloc::format!(
                "policy has {} gains, model has {} modes",
                policy.gains.len(),
                self.n_s
            )));
        }
        for (i, g) in policy.gains.iter().enumerate() {
            if g.shape() != (self.k, self.d) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "K[{i}] is {}×{}, expected {}×{}",
                    g.nrows(),
                    g.ncols(),
                    self.k,
                    self.d
                )));
            }
        }
        Ok(())
    }
}

/// One gain per mode; `u_t = -K_{ω(t)} x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub gains: Vec<Mat>,
}

impl Policy {
    pub fn new(gains: Vec<Mat>) -> Self {
        Self { gains }
    }

    pub fn zeros(model: &MjlsModel) -> Self {
        Self {
            gains: (0..model.n_s)
                .map(|_| Mat::zeros(model.k, model.d))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Frobenius norm of the stacked gains.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.gains.iter().map(|g| g.norm_squared()).sum::<f64>())
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.gains
            .iter()
            .zip(&other.gains)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Solution `{P_i}` of the coupled Lyapunov or coupled Riccati equations.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledValue {
    pub p: Vec<Mat>,
    /// Relative fixed-point residual of `p`.
    pub residual: f64,
    pub iterations: usize,
}

/// Accumulated state correlations `S_i = Σ_t E[x_t x_tᵀ 1{ω(t) = i}]`.
///
/// `χ` is the block diagonal of the `S_i`; it is kept as blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCorrelation {
    pub s: Vec<Mat>,
    pub residual: f64,
    pub iterations: usize,
}

impl StateCorrelation {
    /// `‖χ‖ = max_i ‖S_i‖₂`.
    pub fn chi_norm(&self) -> f64 {
        self.s.iter().map(spectral_norm).fold(0.0, f64::max)
    }

    /// `σ_min(χ) = min_i λ_min(S_i)`.
    pub fn chi_sigma_min(&self) -> f64 {
        self.s.iter().map(sym_min_eig).fold(f64::INFINITY, f64::min)
    }

    /// Materializes the `n_s·d × n_s·d` block-diagonal `χ`.
    pub fn block_diagonal(&self) -> Mat {
        let d = self.s.first().map_or(0, |s| s.nrows());
        let n = self.s.len() * d;
        let mut chi = Mat::zeros(n, n);
        for (i, s) in self.s.iter().enumerate() {
            chi.view_mut((i * d, i * d), (d, d)).copy_from(s);
        }
        chi
    }
}

/// Exact policy gradient and the gain residuals it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// `L_i(K̂) = (R_i + B_iᵀ𝓔_i(P)B_i)K_i - B_iᵀ𝓔_i(P)A_i`.
    pub l: Vec<Mat>,
    /// `∇_{K_i} C = 2 L_i S_i`.
    pub grad: Vec<Mat>,
    /// Frobenius norm of the full gradient.
    pub grad_norm: f64,
}

/// A single violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimension {
        field: &'static str,
    },
    BlockCount {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    Shape {
        field: &'static str,
        index: Option<usize>,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite {
        field: &'static str,
        index: Option<usize>,
    },
    NegativeProbability {
        field: &'static str,
        index: usize,
        value: f64,
    },
    RowSum {
        row: usize,
        sum: f64,
    },
    RhoSum {
        sum: f64,
    },
    RhoNotPositive {
        index: usize,
        value: f64,
    },
    NotSymmetric {
        field: &'static str,
        index: Option<usize>,
        asymmetry: f64,
    },
    NotPositiveDefinite {
        field: &'static str,
        index: Option<usize>,
        min_eigenvalue: f64,
    },
}

struct Indexed(&'static str, Option<usize>);

impl fmt::Display for Indexed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.1 {
            Some(i) => write!(f, "{}[{}]", self.0, i),
            None => f.write_str(self.0),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::EmptyDimension { field } => write!(f, "{field} must be at least 1"),
            Violation::BlockCount {
                field,
                expected,
                found,
            } => {
                write!(f, "{field} has {found} blocks, expected {expected}")
            }
            Violation::Shape {
                field,
                index,
                expected,
                found,
            } => write!(
                f,
                "{} is {}×{}, expected {}×{}",
                Indexed(field, index),
                found.0,
                found.1,
                expected.0,
                expected.1
            ),
            Violation::NonFinite { field, index } => {
                write!(f, "{} has a non-finite entry", Indexed(field, index))
            }
            Violation::NegativeProbability {
                field,
                index,
                value,
            } => {
                write!(f, "{field} entry {index} is negative ({value})")
            }
            Violation::RowSum { row, sum } => write!(f, "row {row} sums to {sum}"),
            Violation::RhoSum { sum } => write!(f, "rho sums to {sum}"),
            Violation::RhoNotPositive { index, value } => {
                write!(f, "rho[{index}] not > 0 ({value})")
            }
            Violation::NotSymmetric {
                field,
                index,
                asymmetry,
            } => {
                write!(
                    f,
                    "{} is not symmetric (max asymmetry {asymmetry:e})",
                    Indexed(field, index)
                )
            }
            Violation::NotPositiveDefinite {
                field,
                index,
                min_eigenvalue,
            } => write!(
                f,
                "{} is not positive definite (min eigenvalue {min_eigenvalue:e})",
                Indexed(field, index)
            ),
        }
    }
}

/// Every invariant a model violates; empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_blocks(
    out: &mut Vec<Violation>,
    field: &'static str,
    blocks: &[Mat],
    n_s: usize,
    shape: (usize, usize),
    spd: bool,
) {
    if blocks.len() != n_s {
        out.push(Violation::BlockCount {
            field,
            expected: n_s,
            found: blocks.len(),
        });
    }
    for (i, m) in blocks.iter().enumerate() {
        check_matrix(out, field, Some(i), m, shape, spd);
    }
}

fn check_matrix(
    out: &mut Vec<Violation>,
    field: &'static str,
    index: Option<usize>,
    m: &Mat,
    shape: (usize, usize),
    spd: bool,
) {
    if m.shape() != shape {
        out.push(Violation::Shape {
            field,
            index,
            expected: shape,
            found: m.shape(),
        });
        return;
    }
    if m.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite { field, index });
        return;
    }
    if spd {
        let asym = asymmetry(m);
        if asym > SYMMETRY_TOL * (1.0 + m.amax()) {
            out.push(Violation::NotSymmetric {
                field,
                index,
                asymmetry: asym,
            });
        }
        let min_eig = sym_min_eig(m);
        if !(min_eig > PD_TOL) {
            out.push(Violation::NotPositiveDefinite {
                field,
                index,
                min_eigenvalue: min_eig,
            });
        }
    }
}

/// Checks every model invariant and reports all violations.
pub fn validate_model(m: &MjlsModel) -> ValidationReport {
    let mut out = Vec::new();
    for (field, v) in [("n_s", m.n_s), ("d", m.d), ("k", m.k)] {
        if v == 0 {
            out.push(Violation::EmptyDimension { field });
        }
    }
    if !out.is_empty() {
        return ValidationReport { violations: out };
    }
    let (n_s, d, k) = (m.n_s, m.d, m.k);
    check_blocks(&mut out, "A", &m.a, n_s, (d, d), false);
    check_blocks(&mut out, "B", &m.b, n_s, (d, k), false);
    check_blocks(&mut out, "Q", &m.q, n_s, (d, d), true);
    check_blocks(&mut out, "R", &m.r, n_s, (k, k), true);
    check_matrix(&mut out, "sigma0", None, &m.sigma0, (d, d), true);

    if m.trans.shape() != (n_s, n_s) {
        out.push(Violation::Shape {
            field: "trans",
            index: None,
            expected: (n_s, n_s),
            found: m.trans.shape(),
        });
    } else if m.trans.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite {
            field: "trans",
            index: None,
        });
    } else {
        for i in 0..n_s {
            let row = m.trans.row(i);
            for (j, &p) in row.iter().enumerate() {
                if p < 0.0 {
                    out.push(Violation::NegativeProbability {
                        field: "trans",
                        index: i * n_s + j,
                        value: p,
                    });
                }
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation::RowSum { row: i, sum });
            }
        }
    }

    if m.rho.len() != n_s {
        out.push(Violation::Shape {
            field: "rho",
            index: None,
            expected: (n_s, 1),
            found: (m.rho.len(), 1),
        });
    } else if m.rho.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite {
            field: "rho",
            index: None,
        });
    } else {
        for (i, &p) in m.rho.iter().enumerate() {
            if !(p > 0.0) {
                out.push(Violation::RhoNotPositive { index: i, value: p });
            }
        }
        let sum = m.rho.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::RhoSum { sum });
        }
    }
    ValidationReport { violations: out }
}

/// Draws a random instance in the style of the sticky-chain experiment.
///
/// Row `i` of the transition matrix is Dirichlet with parameter
/// `self_weight·e_i + 1`; `ρ` is uniform; `Q_i`, `R_i` and `sigma0` are
/// identities; `A_i`, `B_i` have i.i.d. standard normal entries, after which
/// all `A_i` are scaled by one common factor so that the open loop (`K̂ = 0`)
/// has mean-square spectral radius exactly `stability_margin`.
pub fn generate_random_model(
    n_s: usize,
    d: usize,
    k: usize,
    seed: u64,
    self_weight: f64,
    stability_margin: f64,
) -> Result<MjlsModel> {
    if n_s == 0 || d == 0 || k == 0 {
        return Err(Error::InvalidArgument(
            "n_s, d and k must all be at least 1".into(),
        ));
    }
    if !(self_weight >= 0.0) || !self_weight.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "dirichlet self weight must be >= 0, got {self_weight}"
        )));
    }
    if !(stability_margin > 0.0 && stability_margin < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "stability margin must lie in (0, 1), got {stability_margin}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Gamma::new(1.0, 1.0).map_err(|e| Error::Generation(alloc::format!("{e}")))?;
    let sticky =
        Gamma::new(self_weight + 1.0, 1.0).map_err(|e| Error::Generation(alloc::format!("{e}")))?;

    let mut trans = Mat::zeros(n_s, n_s);
    for i in 0..n_s {
        let mut total = 0.0;
        for j in 0..n_s {
            let g: f64 = if i == j {
                sticky.sample(&mut rng)
            } else {
                unit.sample(&mut rng)
            };
            trans[(i, j)] = g;
            total += g;
        }
        if !(total > 0.0) {
            return Err(Error::Generation("degenerate Dirichlet draw".into()));
        }
        for j in 0..n_s {
            trans[(i, j)] /= total;
        }
        // push the rounding error of the normalization onto the largest entry
        let excess = trans.row(i).sum() - 1.0;
        let jmax = (0..n_s).fold(0, |best, j| {
            if trans[(i, j)] > trans[(i, best)] {
                j
            } else {
                best
            }
        });
        trans[(i, jmax)] -= excess;
    }

    let normal = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let mut a = Vec::with_capacity(n_s);
    let mut b = Vec::with_capacity(n_s);
    for _ in 0..n_s {
        a.push(normal(d, d, &mut rng));
        b.push(normal(d, k, &mut rng));
    }

    let mut model = MjlsModel {
        n_s,
        d,
        k,
        a,
        b,
        q: (0..n_s).map(|_| Mat::identity(d, d)).collect(),
        r: (0..n_s).map(|_| Mat::identity(k, k)).collect(),
        trans,
        rho: Vector::from_element(n_s, 1.0 / n_s as f64),
        sigma0: Mat::identity(d, d),
    };

    let cfg = SolverConfig::default();
    let r0 = ms_spectral_radius(&model, &Policy::zeros(&model), &cfg)?.radius;
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::Generation(alloc::format!(
            "open-loop mean-square radius is {r0}; cannot rescale"
        )));
    }
    let scale = libm::sqrt(stability_margin / r0);
    for a in &mut model.a {
        *a *= scale;
    }

    let report = validate_model(&model);
    if !report.is_valid() {
        return Err(Error::InvalidModel(report));
    }
    Ok(model)
}
