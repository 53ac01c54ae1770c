//! Error taxonomy shared by the library and the CLI.
//!
//! Variants are grouped by how the CLI reports them: bad input and
//! configuration exit with code 1, numerical trouble (divergence, failed
//! brackets, unreachable approximation targets) with code 2, and infeasible
//! source-condition certificates with code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument: bad dimensions, out-of-range parameters, malformed
    /// operator descriptions and the like.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Problems reading or interpreting a configuration file.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical routine produced non-finite values or gave up.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The discrepancy-principle bracket does not contain the target band.
    #[error("discrepancy bracket failure: {0}")]
    Bracket(String),

    /// Bisection exhausted its budget without entering [delta, tau*delta].
    #[error(
        "discrepancy bisection exhausted after {solves} solves without entering \
         the band; final bracket alpha in [{alpha_lo:.6e}, {alpha_hi:.6e}], \
         discrepancies [{d_lo:.6e}, {d_hi:.6e}]"
    )]
    BandNotReached {
        solves: usize,
        alpha_lo: f64,
        alpha_hi: f64,
        d_lo: f64,
        d_hi: f64,
    },

    /// A range approximation could not reach the requested l-inf accuracy.
    #[error("approximation reached l-inf distance {achieved:.6e}, requested {requested:.6e}")]
    Approximation { achieved: f64, requested: f64 },

    /// A witness problem required by a gamma table is infeasible.
    #[error(
        "infeasible certificate at n={n}, pattern {xi:?}: \
         match residual {match_residual:.6e}, tail excess {tail_excess:.6e}"
    )]
    Certificate {
        n: usize,
        xi: Vec<i8>,
        match_residual: f64,
        tail_excess: f64,
    },

    /// A sampled variational-inequality check found a positive violation.
    #[error("variational inequality violated: max violation {max_violation:.6e}")]
    Vsc { max_violation: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Io(_) => 1,
            Error::Numerical(_)
            | Error::Bracket(_)
            | Error::BandNotReached { .. }
            | Error::Approximation { .. } => 2,
            Error::Certificate { .. } | Error::Vsc { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
