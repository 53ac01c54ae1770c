//! Dense forward operators `A: R^N -> R^M`, their adjoints, and spectral
//! diagnostics.
//!
//! The data space is `R^M` with the Euclidean norm, so the adjoint is the
//! plain transpose and dual-norm minimization stays quadratic. Three
//! structured families cover the usual test cases:
//!
//! * `Diagonal`:  A = diag(k^-a) — the simplest injective model,
//! * `Bidiagonal`: (Ax)_k = k^-a (x_k + lambda x_{k+1}), upper bidiagonal,
//! * `CumulativeAverage`: (Ax)_i = (1/i) sum_{k<=i} x_k,
//!
//! plus `Custom` for explicit matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::Seq;

/// Operator family tag plus family parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Diagonal { a: f64 },
    Bidiagonal { a: f64, lambda: f64 },
    CumulativeAverage,
    Custom,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Diagonal { .. } => "Diagonal",
            Family::Bidiagonal { .. } => "Bidiagonal",
            Family::CumulativeAverage => "CumulativeAverage",
            Family::Custom => "Custom",
        }
    }
}

/// A dense forward operator with cached operator-norm estimate.
#[derive(Clone, Debug)]
pub struct ForwardOp {
    family: Family,
    matrix: DMatrix<f64>,
    /// Largest singular value, estimated by power iteration at construction.
    op_norm: f64,
}

fn check_decay_exponent(a: f64) -> Result<()> {
    if !a.is_finite() || a < 0.0 {
        return Err(Error::Argument(format!(
            "decay exponent a must be finite and >= 0, got {a}"
        )));
    }
    Ok(())
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("operator size must be at least 1".into()));
    }
    Ok(())
}

impl ForwardOp {
    /// `A = diag(k^-a)`, `k = 1..n`; square.
    pub fn diagonal(a: f64, n: usize) -> Result<Self> {
        check_decay_exponent(a)?;
        check_size(n)?;
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                ((i + 1) as f64).powf(-a)
            } else {
                0.0
            }
        });
        Ok(Self::from_parts(Family::Diagonal { a }, matrix))
    }

    /// `(Ax)_k = k^-a (x_k + lambda x_{k+1})`, last row without the
    /// superdiagonal term; square.
    pub fn bidiagonal(a: f64, lambda: f64, n: usize) -> Result<Self> {
        check_decay_exponent(a)?;
        check_size(n)?;
        if !lambda.is_finite() || lambda <= 0.0 || lambda > 1.0 {
            return Err(Error::Argument(format!(
                "coupling lambda must lie in (0, 1], got {lambda}"
            )));
        }
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            let w = ((i + 1) as f64).powf(-a);
            if j == i {
                w
            } else if j == i + 1 {
                lambda * w
            } else {
                0.0
            }
        });
        Ok(Self::from_parts(Family::Bidiagonal { a, lambda }, matrix))
    }

    /// `(Ax)_i = (1/i) sum_{k<=i} x_k`; square, lower triangular.
    pub fn cumulative_average(n: usize) -> Result<Self> {
        check_size(n)?;
        let matrix = DMatrix::from_fn(n, n, |i, j| {
            if j <= i {
                1.0 / ((i + 1) as f64)
            } else {
                0.0
            }
        });
        Ok(Self::from_parts(Family::CumulativeAverage, matrix))
    }

    /// Arbitrary dense matrix.
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Argument("matrix must be at least 1x1".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("matrix entries must be finite".into()));
        }
        Ok(Self::from_parts(Family::Custom, matrix))
    }

    fn from_parts(family: Family, matrix: DMatrix<f64>) -> Self {
        let op_norm = largest_singular_value(&matrix);
        ForwardOp {
            family,
            matrix,
            op_norm,
        }
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Power-iteration estimate of the largest singular value.
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    /// `Ax`.
    pub fn apply(&self, x: &Seq) -> Result<Seq> {
        if x.len() != self.n() {
            return Err(Error::Argument(format!(
                "apply: x has length {}, operator expects {}",
                x.len(),
                self.n()
            )));
        }
        let v = DVector::from_column_slice(x.as_slice());
        Seq::new((&self.matrix * v).as_slice().to_vec())
    }

    /// `A* eta` (Euclidean adjoint = transpose).
    pub fn apply_adjoint(&self, eta: &Seq) -> Result<Seq> {
        if eta.len() != self.m() {
            return Err(Error::Argument(format!(
                "apply_adjoint: eta has length {}, operator expects {}",
                eta.len(),
                self.m()
            )));
        }
        let v = DVector::from_column_slice(eta.as_slice());
        Seq::new(self.matrix.tr_mul(&v).as_slice().to_vec())
    }

    /// Full-SVD diagnostics: spectral extremes, injectivity flag, and the
    /// column-norm decay proxy.
    pub fn diagnose(&self) -> OpDiagnostics {
        let svd = self.matrix.clone().svd(false, false);
        let mut sigma_max = 0.0_f64;
        let mut sigma_min = f64::INFINITY;
        for &s in svd.singular_values.iter() {
            sigma_max = sigma_max.max(s);
            sigma_min = sigma_min.min(s);
        }
        if !sigma_min.is_finite() {
            sigma_min = 0.0;
        }
        // A wide matrix (M < N) always has a nontrivial null space.
        let injective = self.m() >= self.n() && sigma_min > 1e-10 * sigma_max;
        let column_decay = (0..self.n())
            .map(|j| self.matrix.column(j).norm())
            .collect();
        OpDiagnostics {
            smallest_singular_value: sigma_min,
            largest_singular_value: sigma_max,
            injective,
            column_decay,
            note: DIAGNOSTIC_NOTE.to_string(),
        }
    }
}

/// Finite-scale diagnostics for the standing assumptions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpDiagnostics {
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
    /// `sigma_min > 1e-10 * sigma_max` and the matrix is at least as tall as
    /// it is wide.
    pub injective: bool,
    /// Euclidean norms of the columns `A e^(k)`, a qualitative stand-in for
    /// the dual-range decay assumption; see `note`.
    pub column_decay: Vec<f64>,
    pub note: String,
}

const DIAGNOSTIC_NOTE: &str = "column_decay reports ||A e^(k)||_2 as a qualitative proxy only: \
     the weak*-to-weak continuity assumption it stands in for has no \
     finite-dimensional test, so no pass/fail flag is derived from it";

/// Largest singular value via power iteration on `A^T A`, with a
/// deterministic start vector.
fn largest_singular_value(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.ncols();
    // Deterministic, not axis-aligned, so it is never orthogonal to the top
    // singular vector for the structured families.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i + 1) as f64).sqrt().fract());
    let mut norm = v.norm();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;
    let mut lambda_old = 0.0_f64;
    for _ in 0..10_000 {
        let w = matrix.tr_mul(&(matrix * &v));
        norm = w.norm();
        if norm == 0.0 {
            return 0.0; // A^T A v = 0 with v in the kernel's complement span.
        }
        v = w / norm;
        let lambda = norm; // Rayleigh quotient of A^T A at the previous v.
        if (lambda - lambda_old).abs() <= 1e-15 * lambda {
            return lambda.sqrt();
        }
        lambda_old = lambda;
    }
    lambda_old.sqrt()
}

/// Serializable operator description: `{family, params, m, n, matrix?}`,
/// with `matrix` present only for `Custom`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub family: FamilyTag,
    #[serde(default)]
    pub params: FamilyParams,
    pub m: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyTag {
    Diagonal,
    Bidiagonal,
    CumulativeAverage,
    Custom,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl OperatorSpec {
    /// Build the operator this description names.
    pub fn build(&self) -> Result<ForwardOp> {
        let want_square = |tag: &str| -> Result<()> {
            if self.m != self.n {
                return Err(Error::Argument(format!(
                    "{tag} operators are square; got m={}, n={}",
                    self.m, self.n
                )));
            }
            Ok(())
        };
        match self.family {
            FamilyTag::Diagonal => {
                want_square("Diagonal")?;
                if self.matrix.is_some() {
                    return Err(Error::Argument(
                        "matrix field is only valid for Custom operators".into(),
                    ));
                }
                let a = self
                    .params
                    .a
                    .ok_or_else(|| Error::Argument("Diagonal requires params.a".into()))?;
                ForwardOp::diagonal(a, self.n)
            }
            FamilyTag::Bidiagonal => {
                want_square("Bidiagonal")?;
                if self.matrix.is_some() {
                    return Err(Error::Argument(
                        "matrix field is only valid for Custom operators".into(),
                    ));
                }
                let a = self
                    .params
                    .a
                    .ok_or_else(|| Error::Argument("Bidiagonal requires params.a".into()))?;
                let lambda = self
                    .params
                    .lambda
                    .ok_or_else(|| Error::Argument("Bidiagonal requires params.lambda".into()))?;
                ForwardOp::bidiagonal(a, lambda, self.n)
            }
            FamilyTag::CumulativeAverage => {
                want_square("CumulativeAverage")?;
                if self.matrix.is_some() {
                    return Err(Error::Argument(
                        "matrix field is only valid for Custom operators".into(),
                    ));
                }
                ForwardOp::cumulative_average(self.n)
            }
            FamilyTag::Custom => {
                let rows = self
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::Argument("Custom requires a matrix".into()))?;
                if rows.len() != self.m || rows.iter().any(|r| r.len() != self.n) {
                    return Err(Error::Argument(format!(
                        "Custom matrix must be {}x{}",
                        self.m, self.n
                    )));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                ForwardOp::custom(DMatrix::from_row_slice(self.m, self.n, &flat))
            }
        }
    }

    /// Description of an existing operator (inverse of `build`).
    pub fn of(op: &ForwardOp) -> Self {
        let (family, params, matrix) = match *op.family() {
            Family::Diagonal { a } => (
                FamilyTag::Diagonal,
                FamilyParams {
                    a: Some(a),
                    lambda: None,
                },
                None,
            ),
            Family::Bidiagonal { a, lambda } => (
                FamilyTag::Bidiagonal,
                FamilyParams {
                    a: Some(a),
                    lambda: Some(lambda),
                },
                None,
            ),
            Family::CumulativeAverage => (FamilyTag::CumulativeAverage, FamilyParams::default(), None),
            Family::Custom => {
                let rows = (0..op.m())
                    .map(|i| op.matrix().row(i).iter().copied().collect())
                    .collect();
                (FamilyTag::Custom, FamilyParams::default(), Some(rows))
            }
        };
        OperatorSpec {
            family,
            params,
            m: op.m(),
            n: op.n(),
            matrix,
        }
    }
}
