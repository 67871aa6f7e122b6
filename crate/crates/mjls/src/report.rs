//! Convergence traces (CSV) and run summaries (JSON).

use std::io::{Read, Write};

use mjls_core::policy_opt::Termination;
use mjls_core::{ConvergenceReport, IterationRecord, Method};
use serde::{Deserialize, Serialize};

/// One CSV row per iterate. `percent_error` is `100·(C − C*)/C*` and is empty
/// without a reference optimum; `rate_residual` is empty when no rate bound
/// applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub ms_radius: f64,
    pub eta: Option<f64>,
    pub rate_residual: Option<f64>,
    pub percent_error: Option<f64>,
    pub certified: bool,
    pub method: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl TraceRow {
    pub fn from_record(r: &IterationRecord, method: Method) -> Self {
        Self {
            iter: r.iter,
            cost: r.cost,
            grad_norm: r.grad_norm,
            ms_radius: r.ms_radius,
            eta: finite(r.eta),
            rate_residual: finite(r.rate_residual),
            percent_error: r.rel_gap.map(|g| 100.0 * g),
            certified: r.certified,
            method: method.name().into(),
        }
    }

    /// The fields a replay needs; derived quantities are left empty.
    pub fn to_record(&self) -> IterationRecord {
        IterationRecord {
            iter: self.iter,
            cost: self.cost,
            grad_norm: self.grad_norm,
            ms_radius: self.ms_radius,
            eta: self.eta.unwrap_or(f64::NAN),
            certified: self.certified,
            rate_residual: self.rate_residual.unwrap_or(f64::NAN),
            rel_gap: self.percent_error.map(|p| p / 100.0),
            checks: None,
        }
    }
}

pub fn write_trace<W: Write>(out: W, report: &ConvergenceReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.records {
        w.serialize(TraceRow::from_record(r, report.method))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> csv::Result<Vec<TraceRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub iterations: usize,
    pub termination: String,
    pub final_cost: f64,
    pub final_gap: Option<f64>,
    pub optimal_cost: Option<f64>,
    pub certified: bool,
    /// Vanilla policy gradient has no mean-square convergence guarantee.
    pub guarantee: bool,
    pub non_descent: Vec<usize>,
}

fn termination_label(t: Termination) -> String {
    match t {
        Termination::Converged => "converged".into(),
        Termination::MaxIters => "max_iters".into(),
        Termination::LeftStableSet {
            iter,
            certified_step,
        } => {
            format!("left_stable_set at {iter} (certified step: {certified_step})")
        }
        Termination::SolverFailure { iter } => format!("solver_failure at {iter}"),
    }
}

impl Summary {
    pub fn new(report: &ConvergenceReport) -> Self {
        Self {
            method: report.method.name().into(),
            iterations: report.iterations(),
            termination: termination_label(report.termination),
            final_cost: report.records.last().map_or(f64::NAN, |r| r.cost),
            final_gap: report.final_gap,
            optimal_cost: report.optimal_cost,
            certified: report.certified,
            guarantee: report.has_guarantee(),
            non_descent: report.non_descent.clone(),
        }
    }
}
