//! Direct policy optimization for the quadratic control of Markovian jump
//! linear systems (MJLS).
//!
//! The closed loop under a mode-dependent linear policy `u_t = -K_{ω(t)} x_t`
//! is evaluated through coupled Lyapunov equations, differentiated exactly, and
//! improved with Gauss-Newton or natural policy gradient steps. The optimum is
//! available independently from the coupled Riccati equations, and the
//! [`oracle`] module carries slower reference computations used to check the
//! fast paths.
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is disabled.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod policy_opt;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    generate_random_model, validate_model, CoupledValue, GradientBundle, MjlsModel, Policy,
    StateCorrelation, ValidationReport, Violation,
};
pub use policy_opt::{
    ConvergenceReport, IterationRecord, Method, OptimalSolution, OptimizerConfig, StepSize,
};
pub use stability::SolverConfig;

/// Dense real matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
