//! The rate function attached to a certified gamma table, and sampled
//! checks of the variational smoothness inequality it induces.
//!
//! Given the constants `gamma_n` and a ground truth `x_dagger`, the rate
//! function is
//!
//! ```text
//!     phi(t) = 2 min_{1 <= n <= n_max} ( sum_{k > n} |x_dagger_k| + gamma_n t ),
//! ```
//!
//! a concave, nondecreasing function with `phi(t)/t` nonincreasing. The
//! smoothness statement it feeds is the variational inequality
//!
//! ```text
//!     beta ||x - x_dagger||_1 <= ||x||_1 - ||x_dagger||_1 + phi(||A(x - x_dagger)||_2)
//! ```
//!
//! for all x, with `beta = (1 - mu) / (1 + mu)`. [`check_vsc`] probes this
//! inequality over a deterministic sample mixture; [`theoretical_bound`]
//! turns `phi` into the a-priori and discrepancy error bounds.
//!
//! Truncating the minimum at `n_max` only enlarges `phi`, so every
//! inequality checked here is implied by the ideal (untruncated) one; in
//! particular `phi(0)` equals twice the [`RateFunction::truncation_gap`],
//! which vanishes exactly when `x_dagger` is supported on the first `n_max`
//! coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{ForwardOp, OperatorSpec};
use crate::seq::{compensated_sum, tail_sum, NormKind, Seq};
use crate::witness::GammaTable;

/// `phi` evaluated at one point, together with the minimizing level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiEval {
    /// `phi(t)`.
    pub value: f64,
    /// Smallest 1-based level attaining the minimum.
    pub n_star: usize,
}

/// A concave rate function built from a certified gamma table, an optional
/// closed-form extension of the gamma sequence, and a ground truth.
#[derive(Clone, Debug)]
pub struct RateFunction {
    gamma: GammaTable,
    x_dagger: Seq,
    /// Table gammas followed by the extension; positive and nondecreasing.
    gammas_eff: Vec<f64>,
    /// `tails[i] = sum_{k > i+1} |x_dagger_k|`.
    tails: Vec<f64>,
    truncation_gap: f64,
}

impl RateFunction {
    /// Rate function over exactly the certified levels.
    pub fn new(gamma: GammaTable, x_dagger: &Seq) -> Result<Self> {
        Self::with_extended_gammas(gamma, x_dagger, &[])
    }

    /// Rate function over the certified levels plus trusted extra levels
    /// `gamma_{n_max+1}, ...` (for instance from a closed form). The
    /// extension must be positive, nondecreasing, start no lower than the
    /// last certified value, and stay within the coefficient dimension.
    pub fn with_extended_gammas(
        gamma: GammaTable,
        x_dagger: &Seq,
        extension: &[f64],
    ) -> Result<Self> {
        gamma.validate()?;
        if x_dagger.len() != gamma.operator.n {
            return Err(Error::Argument(format!(
                "ground truth has {} entries but the coefficient dimension is {}",
                x_dagger.len(),
                gamma.operator.n
            )));
        }
        let total = gamma.n_max + extension.len();
        if total > gamma.operator.n {
            return Err(Error::Argument(format!(
                "{} gamma levels exceed the coefficient dimension {}",
                total, gamma.operator.n
            )));
        }
        let mut gammas_eff = gamma.gammas.clone();
        let mut prev = *gammas_eff.last().expect("validated tables are nonempty");
        for (i, &g) in extension.iter().enumerate() {
            if !g.is_finite() || g <= 0.0 {
                return Err(Error::Argument(format!(
                    "gamma extension entry {} must be positive and finite, got {g}",
                    i + 1
                )));
            }
            if g < prev {
                return Err(Error::Argument(format!(
                    "gamma extension not nondecreasing at entry {}: {g} < {prev}",
                    i + 1
                )));
            }
            prev = g;
            gammas_eff.push(g);
        }
        let tails: Vec<f64> = (1..=total).map(|n| tail_sum(x_dagger, n)).collect();
        let truncation_gap = tails[total - 1];
        Ok(RateFunction {
            gamma,
            x_dagger: x_dagger.clone(),
            gammas_eff,
            tails,
            truncation_gap,
        })
    }

    /// The certified table this function was built from.
    pub fn table(&self) -> &GammaTable {
        &self.gamma
    }

    pub fn x_dagger(&self) -> &Seq {
        &self.x_dagger
    }

    /// Tail bound of the underlying table.
    pub fn mu(&self) -> f64 {
        self.gamma.mu
    }

    /// `(1 - mu) / (1 + mu)` for the table's `mu`.
    pub fn beta(&self) -> f64 {
        (1.0 - self.gamma.mu) / (1.0 + self.gamma.mu)
    }

    /// Number of levels, extension included.
    pub fn n_max(&self) -> usize {
        self.gammas_eff.len()
    }

    /// `gamma_n` for 1-based `n`, extension included.
    pub fn gamma_at(&self, n: usize) -> Result<f64> {
        if n == 0 || n > self.gammas_eff.len() {
            return Err(Error::Argument(format!(
                "gamma level {} out of range 1..={}",
                n,
                self.gammas_eff.len()
            )));
        }
        Ok(self.gammas_eff[n - 1])
    }

    /// `sum_{k > n_max} |x_dagger_k|`: by how much the ideal minimum over
    /// all levels could undercut the truncated one. Zero for ground truths
    /// supported on the first `n_max` coordinates.
    pub fn truncation_gap(&self) -> f64 {
        self.truncation_gap
    }

    /// Evaluate `phi(t)` and report the minimizing level (smallest on ties).
    pub fn phi(&self, t: f64) -> Result<PhiEval> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Argument(format!(
                "phi is defined for finite t >= 0, got {t}"
            )));
        }
        let mut best = f64::INFINITY;
        let mut n_star = 1;
        for (i, (&tail, &g)) in self.tails.iter().zip(&self.gammas_eff).enumerate() {
            let term = tail + g * t;
            if term < best {
                best = term;
                n_star = i + 1;
            }
        }
        Ok(PhiEval {
            value: 2.0 * best,
            n_star,
        })
    }
}

/// Deterministic sampling plan for [`check_vsc`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    /// Number of samples (10 per full mixture cycle).
    #[serde(default = "default_sample_count")]
    pub count: usize,
    /// Base seed; sample `i` uses `seed ^ i`.
    #[serde(default = "default_sample_seed")]
    pub seed: u64,
    /// Scale of the perturbations.
    #[serde(default = "default_sample_amplitude")]
    pub amplitude: f64,
}

fn default_sample_count() -> usize {
    1000
}

fn default_sample_seed() -> u64 {
    7
}

fn default_sample_amplitude() -> f64 {
    1.0
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            count: default_sample_count(),
            seed: default_sample_seed(),
            amplitude: default_sample_amplitude(),
        }
    }
}

/// Outcome of a sampled variational-inequality check. Violations are
/// signed: a negative maximum means every sample satisfied its inequality
/// with room to spare.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VscReport {
    /// `(1 - mu) / (1 + mu)`.
    pub beta: f64,
    pub mu: f64,
    pub samples_checked: usize,
    /// Largest sampled `beta ||x - xd||_1 - (||x||_1 - ||xd||_1) - phi(||A(x - xd)||_2)`.
    pub max_violation: f64,
    /// The sample attaining `max_violation`.
    pub worst_sample: Seq,
    /// Largest sampled violation of the per-level estimate
    /// `||P_n d||_1 <= mu ||(I - P_n) d||_1 + gamma_n ||A d||_2` at the
    /// phi-minimizing level.
    pub pm_max_violation: f64,
    pub truncation_gap: f64,
}

fn check_vsc_inputs(op: &ForwardOp, x_dagger: &Seq, rf: &RateFunction) -> Result<()> {
    if OperatorSpec::of(op) != rf.table().operator {
        return Err(Error::Argument(
            "operator does not match the one the gamma table certifies".into(),
        ));
    }
    if x_dagger.as_slice() != rf.x_dagger().as_slice() {
        return Err(Error::Argument(
            "ground truth does not match the one the rate function was built from".into(),
        ));
    }
    Ok(())
}

/// Signed violation of the variational inequality at one candidate `x`.
pub fn vsc_violation(
    op: &ForwardOp,
    x_dagger: &Seq,
    rf: &RateFunction,
    x: &Seq,
) -> Result<f64> {
    check_vsc_inputs(op, x_dagger, rf)?;
    Ok(violation_pair(op, x_dagger, rf, x)?.0)
}

fn violation_pair(
    op: &ForwardOp,
    x_dagger: &Seq,
    rf: &RateFunction,
    x: &Seq,
) -> Result<(f64, f64)> {
    let d = x.sub(x_dagger)?;
    let r = op.apply(&d)?.norm(NormKind::L2);
    let eval = rf.phi(r)?;
    let lhs = rf.beta() * d.norm(NormKind::L1);
    let rhs = x.norm(NormKind::L1) - x_dagger.norm(NormKind::L1) + eval.value;
    let violation = lhs - rhs;

    // Per-level estimate at the minimizing level: ||P_n d||_1 bounded by the
    // witness pairing.
    let n = eval.n_star;
    let prefix = compensated_sum(d.as_slice()[..n].iter().map(|v| v.abs()));
    let pm = prefix - rf.mu() * tail_sum(&d, n) - rf.gamma_at(n)? * r;
    Ok((violation, pm))
}

/// Probe the variational inequality over a deterministic mixture of
/// perturbations of `x_dagger`: per 10 samples, four sparse coordinate
/// perturbations, four dense Gaussian perturbations, and two scaled sign
/// flips. Sample `i` draws from a fresh generator seeded with `seed ^ i`.
pub fn check_vsc(
    op: &ForwardOp,
    x_dagger: &Seq,
    rf: &RateFunction,
    mu: f64,
    sampler: &SampleSpec,
) -> Result<VscReport> {
    check_vsc_inputs(op, x_dagger, rf)?;
    if mu != rf.mu() {
        return Err(Error::Argument(format!(
            "mu {} does not match the gamma table's mu {}",
            mu,
            rf.mu()
        )));
    }
    if sampler.count == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    if !sampler.amplitude.is_finite() || sampler.amplitude <= 0.0 {
        return Err(Error::Argument(format!(
            "sample amplitude must be positive and finite, got {}",
            sampler.amplitude
        )));
    }

    let n = x_dagger.len();
    let mut max_violation = f64::NEG_INFINITY;
    let mut pm_max = f64::NEG_INFINITY;
    let mut worst = x_dagger.clone();
    for i in 0..sampler.count {
        let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed ^ (i as u64));
        let mut values = x_dagger.as_slice().to_vec();
        match i % 10 {
            0..=3 => {
                // Sparse: bump a few coordinates.
                let hits = rng.random_range(1..=3usize);
                for _ in 0..hits {
                    let k = rng.random_range(0..n);
                    values[k] += sampler.amplitude * rng.random_range(-2.0..2.0);
                }
            }
            4..=7 => {
                // Dense Gaussian perturbation.
                for v in values.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *v += sampler.amplitude * g;
                }
            }
            _ => {
                // Scaled sign flips.
                let c: f64 = rng.random_range(0.25..4.0);
                for v in values.iter_mut() {
                    let flip = if rng.random_range(0..2u8) == 0 { 1.0 } else { -1.0 };
                    *v *= c * flip;
                }
            }
        }
        let x = Seq::new(values)?;
        let (violation, pm) = violation_pair(op, x_dagger, rf, &x)?;
        if violation > max_violation {
            max_violation = violation;
            worst = x;
        }
        pm_max = pm_max.max(pm);
    }

    Ok(VscReport {
        beta: rf.beta(),
        mu,
        samples_checked: sampler.count,
        max_violation,
        worst_sample: worst,
        pm_max_violation: pm_max,
        truncation_gap: rf.truncation_gap(),
    })
}

/// Which convergence-rate bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BoundRule {
    /// A-priori choice `alpha ~ delta^p / phi(delta)` with proportionality
    /// window `[c1, c2]`.
    APriori { c1: f64, c2: f64, p: f64 },
    /// Discrepancy principle with band `[delta, tau * delta]`.
    Discrepancy { tau: f64 },
}

/// Guaranteed l1 error bound at noise level `delta`:
/// `(1/beta) (1 + 1/c1 + (1 + 2 c2)^(1/(p-1))) phi(delta)` for the a-priori
/// choice and `((1 + tau)/beta) phi(delta)` for the discrepancy principle,
/// with `beta = (1 - mu)/(1 + mu)`.
pub fn theoretical_bound(
    rf: &RateFunction,
    rule: &BoundRule,
    mu: f64,
    delta: f64,
) -> Result<f64> {
    if !mu.is_finite() || !(0.0..1.0).contains(&mu) {
        return Err(Error::Argument(format!(
            "tail bound mu must satisfy 0 <= mu < 1, got {mu}"
        )));
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Argument(format!(
            "noise level delta must be positive and finite, got {delta}"
        )));
    }
    let beta = (1.0 - mu) / (1.0 + mu);
    let constant = match rule {
        BoundRule::APriori { c1, c2, p } => {
            if !c1.is_finite() || !c2.is_finite() || *c1 <= 0.0 || c1 > c2 {
                return Err(Error::Argument(format!(
                    "proportionality window requires 0 < c1 <= c2, got [{c1}, {c2}]"
                )));
            }
            if !p.is_finite() || *p <= 1.0 {
                return Err(Error::Argument(format!(
                    "residual exponent p must exceed 1, got {p}"
                )));
            }
            (1.0 + 1.0 / c1 + (1.0 + 2.0 * c2).powf(1.0 / (p - 1.0))) / beta
        }
        BoundRule::Discrepancy { tau } => {
            if !tau.is_finite() || *tau < 1.0 {
                return Err(Error::Argument(format!(
                    "discrepancy parameter tau must be at least 1, got {tau}"
                )));
            }
            (1.0 + tau) / beta
        }
    };
    Ok(constant * rf.phi(delta)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::SignPattern;
    use crate::witness::{compute_gamma_table, GammaMethod, GammaTable};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Table with gammas (1, 2, 3, 4) over a diagonal operator on N = 4.
    fn table_1234() -> GammaTable {
        let op = ForwardOp::diagonal(1.0, 4).unwrap();
        let patterns: Vec<SignPattern> = (1..=4)
            .map(|n| SignPattern::new(vec![1i8; n]).unwrap())
            .collect();
        GammaTable::from_values(
            OperatorSpec::of(&op),
            0.5,
            GammaMethod::BruteForce,
            vec![1.0, 2.0, 3.0, 4.0],
            patterns,
        )
        .unwrap()
    }

    fn rf_1234() -> RateFunction {
        let x = Seq::new(vec![1.0, 0.5, 0.0, 0.0]).unwrap();
        RateFunction::new(table_1234(), &x).unwrap()
    }

    #[test]
    fn phi_matches_hand_computation() {
        let rf = rf_1234();
        // tails: (0.5, 0, 0, 0); at t = 0.25 the minimum is 0.5 at n = 2.
        let eval = rf.phi(0.25).unwrap();
        assert_abs_diff_eq!(eval.value, 1.0, epsilon = 1e-15);
        assert_eq!(eval.n_star, 2);
        // Small t stays on level 2: phi(t) = 2 * 2t.
        let small = rf.phi(0.1).unwrap();
        assert_abs_diff_eq!(small.value, 0.4, epsilon = 1e-15);
        assert_eq!(small.n_star, 2);
        // Large t switches to level 1.
        let large = rf.phi(1.0).unwrap();
        assert_abs_diff_eq!(large.value, 3.0, epsilon = 1e-15);
        assert_eq!(large.n_star, 1);
    }

    #[test]
    fn phi_vanishes_at_zero_for_supported_truth() {
        let rf = rf_1234();
        let eval = rf.phi(0.0).unwrap();
        assert_abs_diff_eq!(eval.value, 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(rf.truncation_gap(), 0.0, epsilon = 0.0);
    }

    #[test]
    fn phi_at_zero_sees_the_truncation_gap() {
        let x = Seq::new(vec![1.0, 0.5, 0.25, 0.125]).unwrap();
        let rf = RateFunction::new(table_1234(), &x).unwrap();
        assert_abs_diff_eq!(rf.truncation_gap(), 0.0, epsilon = 0.0);
        // Truncate the table to two levels: the gap is 0.25 + 0.125.
        let short = GammaTable::from_values(
            table_1234().operator,
            0.5,
            GammaMethod::BruteForce,
            vec![1.0, 2.0],
            vec![
                SignPattern::new(vec![1]).unwrap(),
                SignPattern::new(vec![1, 1]).unwrap(),
            ],
        )
        .unwrap();
        let rf = RateFunction::new(short, &x).unwrap();
        assert_abs_diff_eq!(rf.truncation_gap(), 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(rf.phi(0.0).unwrap().value, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn phi_for_sparse_truth_is_linear_near_zero() {
        // Support within the first two levels: for small t the minimum sits
        // at n = 2 and phi(t) = 2 gamma_2 t exactly.
        let rf = rf_1234();
        for &t in &[1e-6, 1e-4, 1e-2] {
            let eval = rf.phi(t).unwrap();
            assert_relative_eq!(eval.value, 2.0 * 2.0 * t, max_relative = 1e-14);
            assert_eq!(eval.n_star, 2);
        }
    }

    #[test]
    fn phi_properties_on_a_grid() {
        let x = Seq::new(vec![1.0, 0.5, 0.25, 0.0]).unwrap();
        let rf = RateFunction::new(table_1234(), &x).unwrap();
        let ts: Vec<f64> = (0..=200).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| rf.phi(t).unwrap().value).collect();
        for i in 1..ts.len() {
            // Nondecreasing.
            assert!(vals[i] + 1e-12 >= vals[i - 1]);
        }
        for i in 1..ts.len() - 1 {
            // Midpoint concavity.
            assert!(vals[i] >= 0.5 * (vals[i - 1] + vals[i + 1]) - 1e-12);
        }
        for i in 2..ts.len() {
            // phi(t)/t nonincreasing.
            let r0 = vals[i - 1] / ts[i - 1];
            let r1 = vals[i] / ts[i];
            assert!(r1 <= r0 + 1e-12 * (1.0 + r0));
        }
        // phi(c t) <= c phi(t) for c >= 1.
        for &c in &[1.0, 1.5, 2.0, 10.0] {
            for &t in &[0.01, 0.1, 0.5] {
                let lhs = rf.phi(c * t).unwrap().value;
                let rhs = c * rf.phi(t).unwrap().value;
                assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
            }
        }
    }

    #[test]
    fn phi_rejects_bad_input() {
        let rf = rf_1234();
        assert!(rf.phi(-0.1).is_err());
        assert!(rf.phi(f64::NAN).is_err());
        assert!(rf.phi(f64::INFINITY).is_err());
    }

    #[test]
    fn extension_contract_is_enforced() {
        let x = Seq::new(vec![1.0, 0.5, 0.0, 0.0]).unwrap();
        let short = GammaTable::from_values(
            table_1234().operator,
            0.5,
            GammaMethod::BruteForce,
            vec![1.0, 2.0],
            vec![
                SignPattern::new(vec![1]).unwrap(),
                SignPattern::new(vec![1, 1]).unwrap(),
            ],
        )
        .unwrap();
        // Valid extension.
        let rf = RateFunction::with_extended_gammas(short.clone(), &x, &[3.0, 4.5]).unwrap();
        assert_eq!(rf.n_max(), 4);
        assert_abs_diff_eq!(rf.gamma_at(4).unwrap(), 4.5, epsilon = 0.0);
        // Drops below the certified prefix.
        assert!(RateFunction::with_extended_gammas(short.clone(), &x, &[1.5]).is_err());
        // Not nondecreasing inside.
        assert!(RateFunction::with_extended_gammas(short.clone(), &x, &[3.0, 2.5]).is_err());
        // Nonpositive.
        assert!(RateFunction::with_extended_gammas(short.clone(), &x, &[-1.0]).is_err());
        // Exceeds the coefficient dimension (N = 4).
        assert!(
            RateFunction::with_extended_gammas(short, &x, &[3.0, 4.0, 5.0]).is_err()
        );
    }

    #[test]
    fn beta_is_exact() {
        let rf = rf_1234();
        assert_eq!(rf.beta(), (1.0 - 0.5) / (1.0 + 0.5));
    }

    #[test]
    fn bound_constants_match_formulas() {
        // mu = 0.5 -> beta = 1/3. A-priori with c1 = c2 = 1, p = 2:
        // 3 * (1 + 1 + 3) = 15. Discrepancy with tau = 1.5: 3 * 2.5 = 7.5.
        // Discrepancy with tau = 1 at mu = 0: 2.
        let rf = rf_1234();
        let delta = 0.05;
        let phi = rf.phi(delta).unwrap().value;
        let apriori = BoundRule::APriori {
            c1: 1.0,
            c2: 1.0,
            p: 2.0,
        };
        assert_relative_eq!(
            theoretical_bound(&rf, &apriori, 0.5, delta).unwrap(),
            15.0 * phi,
            max_relative = 1e-14
        );
        let disc = BoundRule::Discrepancy { tau: 1.5 };
        assert_relative_eq!(
            theoretical_bound(&rf, &disc, 0.5, delta).unwrap(),
            7.5 * phi,
            max_relative = 1e-14
        );
        let disc1 = BoundRule::Discrepancy { tau: 1.0 };
        assert_relative_eq!(
            theoretical_bound(&rf, &disc1, 0.0, delta).unwrap(),
            2.0 * phi,
            max_relative = 1e-14
        );
    }

    #[test]
    fn bound_rejects_bad_parameters() {
        let rf = rf_1234();
        let good = BoundRule::Discrepancy { tau: 1.5 };
        assert!(theoretical_bound(&rf, &good, 0.5, 0.0).is_err());
        assert!(theoretical_bound(&rf, &good, 1.0, 0.1).is_err());
        assert!(theoretical_bound(&rf, &BoundRule::Discrepancy { tau: 0.9 }, 0.5, 0.1).is_err());
        let bad_window = BoundRule::APriori {
            c1: 2.0,
            c2: 1.0,
            p: 2.0,
        };
        assert!(theoretical_bound(&rf, &bad_window, 0.5, 0.1).is_err());
        let bad_p = BoundRule::APriori {
            c1: 1.0,
            c2: 1.0,
            p: 1.0,
        };
        assert!(theoretical_bound(&rf, &bad_p, 0.5, 0.1).is_err());
    }

    /// Certified setting for the sampled checks.
    fn certified_setup() -> (ForwardOp, Seq, RateFunction) {
        let op = ForwardOp::diagonal(1.0, 8).unwrap();
        let table = compute_gamma_table(&op, 0.5, 4, GammaMethod::BruteForce).unwrap();
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        x[1] = 0.5;
        let x = Seq::new(x).unwrap();
        let rf = RateFunction::new(table, &x).unwrap();
        (op, x, rf)
    }

    #[test]
    fn violation_vanishes_at_the_truth() {
        let (op, x, rf) = certified_setup();
        let v = vsc_violation(&op, &x, &rf, &x).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn violation_is_negative_for_scaled_truth() {
        let (op, x, rf) = certified_setup();
        let doubled = Seq::new(x.iter().map(|v| 2.0 * v).collect()).unwrap();
        let v = vsc_violation(&op, &x, &rf, &doubled).unwrap();
        assert!(v <= 1e-12, "violation {v}");
    }

    #[test]
    fn sampled_check_stays_below_tolerance() {
        let (op, x, rf) = certified_setup();
        let spec = SampleSpec {
            count: 500,
            seed: 2024,
            amplitude: 1.0,
        };
        let report = check_vsc(&op, &x, &rf, 0.5, &spec).unwrap();
        assert_eq!(report.samples_checked, 500);
        assert!(
            report.max_violation <= 1e-8,
            "max violation {}",
            report.max_violation
        );
        assert!(
            report.pm_max_violation <= 1e-8,
            "pm violation {}",
            report.pm_max_violation
        );
        assert_eq!(report.beta, (1.0 - 0.5) / (1.0 + 0.5));
        assert_eq!(report.worst_sample.len(), 8);
    }

    #[test]
    fn sampled_check_is_deterministic() {
        let (op, x, rf) = certified_setup();
        let spec = SampleSpec {
            count: 100,
            seed: 5,
            amplitude: 2.0,
        };
        let a = check_vsc(&op, &x, &rf, 0.5, &spec).unwrap();
        let b = check_vsc(&op, &x, &rf, 0.5, &spec).unwrap();
        assert_eq!(a.max_violation, b.max_violation);
        assert_eq!(a.pm_max_violation, b.pm_max_violation);
        assert_eq!(a.worst_sample.as_slice(), b.worst_sample.as_slice());
    }

    #[test]
    fn sampled_check_validates_consistency() {
        let (op, x, rf) = certified_setup();
        let spec = SampleSpec::default();
        // Wrong mu.
        assert!(check_vsc(&op, &x, &rf, 0.3, &spec).is_err());
        // Wrong operator.
        let other = ForwardOp::diagonal(2.0, 8).unwrap();
        assert!(check_vsc(&other, &x, &rf, 0.5, &spec).is_err());
        // Wrong ground truth.
        let y = Seq::zeros(8).unwrap();
        assert!(check_vsc(&op, &y, &rf, 0.5, &spec).is_err());
        // Degenerate sampler.
        let zero = SampleSpec {
            count: 0,
            ..SampleSpec::default()
        };
        assert!(check_vsc(&op, &x, &rf, 0.5, &zero).is_err());
        let bad_amp = SampleSpec {
            amplitude: 0.0,
            ..SampleSpec::default()
        };
        assert!(check_vsc(&op, &x, &rf, 0.5, &bad_amp).is_err());
    }

    #[test]
    fn sample_spec_deserializes_with_defaults() {
        let spec: SampleSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(spec.count, 1000);
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.amplitude, 1.0);
        assert!(serde_json::from_str::<SampleSpec>("{\"bogus\": 1}").is_err());
    }
}
