//! Continuous Newton-type flows for nonlinear operator equations
//! `Lv + g(v) = 0` on finite-dimensional Hilbert spaces.
//!
//! The flow `u̇ = −[I + (L+εI)⁻¹ g′(u)]⁻¹ (u + (L+εI)⁻¹ g(u))` drives the
//! preconditioned residual to zero at the rate `e⁻ᵗ`. For singular self-adjoint
//! `L ≥ 0` and monotone `g`, the shifted problems are solved for a decreasing
//! sequence of `ε`, whose iterates approach the minimal-norm solution.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod problems;
pub mod regularization;

pub use error::{Error, Result};
pub use flow::{integrate, phi, FlowConfig, FlowResult, FlowStatus, TrajectoryPoint};
pub use linalg::{DenseOperator, OperatorFlags, VectorH};
pub use model::{
    BuiltinG, Certificate, CertificateKind, DsmProblem, NonlinearMap, Nonlinearity, Sector,
};
pub use oracles::OracleReport;
pub use problems::{ProblemInstance, Tag};
pub use regularization::{ContinuationResult, EpsSchedule, Solution};
