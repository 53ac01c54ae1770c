//! Sequence-space primitives: finite coefficient vectors, cut-off
//! projectors, tail sums, and sign patterns.
//!
//! A [`Seq`] stands in for the first `N` coefficients of an infinite
//! sequence — the unknown `x`, its exact counterpart `x†`, or a dual-side
//! vector such as `A*eta` — so every operation here is plain vector algebra.
//! Norms and tail sums accumulate with compensated summation so the same
//! input always produces bit-identical output regardless of how the compiler
//! would otherwise reassociate the additions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compensated (Kahan–Neumaier) left-to-right sum.
///
/// Keeps a running error term so that cancellation between large and small
/// addends does not silently discard the small ones; `[1e16, 1.0, -1e16]`
/// sums to exactly `1.0`.
pub fn compensated_sum<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
{
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Which norm to evaluate on a [`Seq`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
    LInf,
}

/// A finite coefficient sequence: the first `N` entries of an l1 (or,
/// on the dual side, l-infinity) element. Entries are always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seq(Vec<f64>);

impl Seq {
    /// Wrap raw coefficients. Every entry must be finite and `N >= 1`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("sequence must have at least one entry".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "sequence entry {} is not finite: {}",
                k + 1,
                values[k]
            )));
        }
        Ok(Seq(values))
    }

    /// The zero sequence of length `n` (n >= 1 is the caller's business;
    /// a zero-length request still fails).
    pub fn zeros(n: usize) -> Result<Self> {
        Seq::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Requested norm of the sequence; zero exactly when the sequence is zero.
    pub fn norm(&self, which: NormKind) -> f64 {
        match which {
            NormKind::L1 => compensated_sum(self.0.iter().map(|v| v.abs())),
            NormKind::L2 => compensated_sum(self.0.iter().map(|v| v * v)).sqrt(),
            NormKind::LInf => self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }

    /// Entry-wise difference `self - other`.
    pub fn sub(&self, other: &Seq) -> Result<Seq> {
        if self.len() != other.len() {
            return Err(Error::Argument(format!(
                "length mismatch in subtraction: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Seq::new(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

impl std::ops::Index<usize> for Seq {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Sum of `|x_k|` for `k > n` (1-based `n`); the full l1 norm at `n = 0`,
/// empty (zero) at `n >= N`.
pub fn tail_sum(x: &Seq, n: usize) -> f64 {
    let tail = x.as_slice().get(n..).unwrap_or(&[]);
    compensated_sum(tail.iter().map(|v| v.abs()))
}

/// The cut-off projector `P_n`: keeps entries `1..n`, zeroes the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Projector {
    n: usize,
}

impl Projector {
    /// `n` is the 1-based cut-off index; `P_n` keeps the first `n` entries.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("projector cut-off must be at least 1".into()));
        }
        Ok(Projector { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `P_n x`: entries `1..n` copied, the rest zeroed. Idempotent.
    pub fn apply(&self, x: &Seq) -> Result<Seq> {
        if self.n > x.len() {
            return Err(Error::Argument(format!(
                "projector cut-off {} exceeds sequence length {}",
                self.n,
                x.len()
            )));
        }
        let mut out = x.as_slice().to_vec();
        for v in out.iter_mut().skip(self.n) {
            *v = 0.0;
        }
        Seq::new(out)
    }

    /// `(I - P_n) x`: the complementary tail block.
    pub fn complement(&self, x: &Seq) -> Result<Seq> {
        if self.n > x.len() {
            return Err(Error::Argument(format!(
                "projector cut-off {} exceeds sequence length {}",
                self.n,
                x.len()
            )));
        }
        let mut out = vec![0.0; x.len()];
        out[self.n..].copy_from_slice(&x.as_slice()[self.n..]);
        Seq::new(out)
    }
}

/// A sign vector on the first `n` coordinates; everything beyond is
/// implicitly zero. Entries live in {-1, 0, +1}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignPattern(Vec<i8>);

impl SignPattern {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Argument("sign pattern must have at least one entry".into()));
        }
        if let Some(k) = entries.iter().position(|e| !matches!(e, -1 | 0 | 1)) {
            return Err(Error::Argument(format!(
                "sign pattern entry {} is {}, expected -1, 0, or +1",
                k + 1,
                entries[k]
            )));
        }
        Ok(SignPattern(entries))
    }

    /// Support length `n` (the pattern is zero beyond it by convention).
    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[i8] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }
}

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Componentwise sign of the first `n` entries (`sgn(0) = 0`).
pub fn sign_pattern_of(x: &Seq, n: usize) -> Result<SignPattern> {
    if n == 0 || n > x.len() {
        return Err(Error::Argument(format!(
            "sign pattern cut-off {} out of range 1..={}",
            n,
            x.len()
        )));
    }
    SignPattern::new(x.as_slice()[..n].iter().map(|&v| sgn(v)).collect())
}
