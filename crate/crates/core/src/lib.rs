//! l1-regularized Tikhonov regularization for discretized linear ill-posed
//! problems, with machine-checkable certificates for the assumptions behind
//! its convergence-rate guarantees.
//!
//! The pipeline, bottom to top:
//!
//! - [`seq`]: finite coefficient sequences, norms, tail sums, sign patterns,
//!   and compensated summation.
//! - [`operators`]: forward matrices (diagonal, bidiagonal, cumulative
//!   average, custom) with adjoints and spectral diagnostics.
//! - [`solver`]: proximal-gradient minimization of
//!   `||A x - y||_2^p + alpha ||x||_1` with certified optimality residuals.
//! - [`witness`]: dual witnesses for prefix sign patterns — the quantities
//!   `gamma_n` that calibrate the rate function — plus a constructive
//!   range-density approximation and a range-closure probe.
//! - [`rate`]: the concave rate function `phi` built from a certified gamma
//!   table, sampling checks for the variational inequality it induces, and
//!   the resulting error bounds.
//! - [`rules`]: a-priori and discrepancy parameter choices.
//! - [`experiment`]: noise synthesis, grid runs, slope fits, and report
//!   serialization.
//! - [`cli`]: the `l1rate` command-line front end.
//!
//! Everything numerical is deterministic for a fixed spec and seed.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod operators;
mod qp;
pub mod rate;
pub mod rules;
pub mod seq;
pub mod solver;
pub mod witness;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentReport, ExperimentSpec};
pub use operators::{ForwardOp, OperatorSpec};
pub use rate::{check_vsc, theoretical_bound, RateFunction, VscReport};
pub use rules::{choose_a_priori, choose_discrepancy, APrioriRule, DiscrepancyRule};
pub use seq::{Seq, SignPattern};
pub use solver::{SolveResult, SolverOptions, TikhonovProblem};
pub use witness::{compute_gamma_table, find_witness, GammaTable, SourceCertificate};
