//! Regularization-parameter choice rules.
//!
//! Two rules are provided. The a-priori rule uses only the noise level and
//! the rate function: `alpha = sqrt(c1 c2) * delta^p / phi(delta)`, which
//! keeps `alpha * phi(delta) / delta^p` inside the window `[c1, c2]`. The
//! discrepancy principle instead solves for trial `alpha` until the data
//! residual lands in the band `[delta, tau * delta]`, exploiting that the
//! discrepancy is nondecreasing in `alpha`; the search brackets the band on
//! a logarithmic grid and bisects, warm-starting every solve from the most
//! recent minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::ForwardOp;
use crate::rate::RateFunction;
use crate::seq::{NormKind, Seq};
use crate::solver::{zero_threshold_alpha, SolveResult, SolverOptions, TikhonovProblem};

/// The value a rule settled on. `ZeroSolution` signals that the data norm
/// is already within the noise band, so the regularized minimizer is the
/// zero sequence for every sufficiently large `alpha` (reported as infinite
/// by [`AlphaChoice::as_f64`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaChoice {
    Finite(f64),
    ZeroSolution,
}

impl AlphaChoice {
    /// Numeric view: finite alpha, or infinity for the zero solution.
    pub fn as_f64(&self) -> f64 {
        match self {
            AlphaChoice::Finite(a) => *a,
            AlphaChoice::ZeroSolution => f64::INFINITY,
        }
    }

    pub fn is_zero_solution(&self) -> bool {
        matches!(self, AlphaChoice::ZeroSolution)
    }
}

/// Which rule produced a choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    APriori,
    Discrepancy,
}

/// A parameter choice, with bookkeeping for how much work it cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChosenAlpha {
    pub alpha: AlphaChoice,
    /// Data residual at the choice. The a-priori rule touches no data, so
    /// it reports 0.0 here; the pipeline fills in the solved residual.
    pub discrepancy: f64,
    pub rule: RuleKind,
    /// Tikhonov solves spent making the choice.
    pub solves_used: usize,
}

/// A-priori rule `alpha = sqrt(c1 c2) * delta^p / phi(delta)` over the
/// window `0 < c1 <= c2`.
#[derive(Clone, Debug)]
pub struct APrioriRule<'a> {
    c1: f64,
    c2: f64,
    phi: &'a RateFunction,
    p: f64,
}

impl<'a> APrioriRule<'a> {
    pub fn new(c1: f64, c2: f64, phi: &'a RateFunction, p: f64) -> Result<Self> {
        if !c1.is_finite() || !c2.is_finite() || c1 <= 0.0 || c1 > c2 {
            return Err(Error::Argument(format!(
                "proportionality window requires 0 < c1 <= c2, got [{c1}, {c2}]"
            )));
        }
        if !p.is_finite() || p <= 1.0 {
            return Err(Error::Argument(format!(
                "residual exponent p must exceed 1, got {p}"
            )));
        }
        Ok(APrioriRule { c1, c2, phi, p })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn phi(&self) -> &RateFunction {
        self.phi
    }
}

/// Evaluate the a-priori rule at noise level `delta`. No data is touched:
/// `solves_used` is zero and the reported discrepancy is 0.0.
pub fn choose_a_priori(rule: &APrioriRule<'_>, delta: f64) -> Result<ChosenAlpha> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Argument(format!(
            "noise level delta must be positive and finite, got {delta}"
        )));
    }
    let phi = rule.phi.phi(delta)?.value;
    if phi == 0.0 {
        return Err(Error::Numerical(format!(
            "rate function vanishes at delta = {delta}; the a-priori quotient is undefined"
        )));
    }
    let alpha = (rule.c1 * rule.c2).sqrt() * delta.powf(rule.p) / phi;
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Numerical(format!(
            "a-priori alpha degenerated to {alpha} at delta = {delta}"
        )));
    }
    Ok(ChosenAlpha {
        alpha: AlphaChoice::Finite(alpha),
        discrepancy: 0.0,
        rule: RuleKind::APriori,
        solves_used: 0,
    })
}

/// Discrepancy principle: find `alpha` with residual in `[delta, tau*delta]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancyRule {
    /// Band width factor, at least 1.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Lower bracket end; defaults to `1e-12` times the upper end.
    #[serde(default)]
    pub alpha_min: Option<f64>,
    /// Upper bracket end; defaults to the zero-solution threshold, where
    /// the discrepancy equals the data norm without solving.
    #[serde(default)]
    pub alpha_max: Option<f64>,
    #[serde(default = "default_max_bisections")]
    pub max_bisections: usize,
}

fn default_tau() -> f64 {
    1.5
}

fn default_max_bisections() -> usize {
    60
}

impl Default for DiscrepancyRule {
    fn default() -> Self {
        DiscrepancyRule {
            tau: default_tau(),
            alpha_min: None,
            alpha_max: None,
            max_bisections: default_max_bisections(),
        }
    }
}

impl DiscrepancyRule {
    pub fn new(tau: f64) -> Result<Self> {
        let rule = DiscrepancyRule {
            tau,
            ..DiscrepancyRule::default()
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau < 1.0 {
            return Err(Error::Argument(format!(
                "discrepancy parameter tau must be at least 1, got {}",
                self.tau
            )));
        }
        for (name, v) in [("alpha_min", self.alpha_min), ("alpha_max", self.alpha_max)] {
            if let Some(v) = v {
                if !v.is_finite() || v <= 0.0 {
                    return Err(Error::Argument(format!(
                        "{name} must be positive and finite, got {v}"
                    )));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.alpha_min, self.alpha_max) {
            if lo >= hi {
                return Err(Error::Argument(format!(
                    "alpha bracket is empty: alpha_min {lo} >= alpha_max {hi}"
                )));
            }
        }
        if self.max_bisections == 0 {
            return Err(Error::Argument("max_bisections must be at least 1".into()));
        }
        Ok(())
    }
}

/// One evaluated point of a discrepancy search, in chronological order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub alpha: f64,
    pub discrepancy: f64,
    /// Solver iterations spent at this point (0 for the analytic
    /// zero-solution endpoint).
    pub iterations: usize,
}

/// Full outcome of a discrepancy search: the choice, the evaluation trace,
/// and the minimizer at the chosen alpha (absent for the zero solution).
#[derive(Clone, Debug)]
pub struct DiscrepancySearch {
    pub chosen: ChosenAlpha,
    pub trace: Vec<TracePoint>,
    pub solution: Option<SolveResult>,
    /// Every solve along the way reported convergence.
    pub all_converged: bool,
}

struct SearchState<'a> {
    op: &'a ForwardOp,
    y: &'a Seq,
    p: f64,
    opts: &'a SolverOptions,
    trace: Vec<TracePoint>,
    solves: usize,
    all_converged: bool,
    warm: Option<Seq>,
}

impl SearchState<'_> {
    fn eval(&mut self, alpha: f64) -> Result<SolveResult> {
        let problem = TikhonovProblem::new(self.op, self.y, alpha, self.p)?;
        let r = problem.solve(self.opts, self.warm.as_ref())?;
        self.solves += 1;
        self.trace.push(TracePoint {
            alpha,
            discrepancy: r.residual_norm,
            iterations: r.iterations,
        });
        if !r.converged {
            self.all_converged = false;
        }
        self.warm = Some(r.x.clone());
        Ok(r)
    }

    fn finish(self, alpha: f64, r: SolveResult) -> DiscrepancySearch {
        DiscrepancySearch {
            chosen: ChosenAlpha {
                alpha: AlphaChoice::Finite(alpha),
                discrepancy: r.residual_norm,
                rule: RuleKind::Discrepancy,
                solves_used: self.solves,
            },
            trace: self.trace,
            solution: Some(r),
            all_converged: self.all_converged,
        }
    }
}

/// Run the discrepancy principle with explicit solver options, returning
/// the full trace. See [`choose_discrepancy`] for the plain choice.
pub fn discrepancy_search(
    rule: &DiscrepancyRule,
    op: &ForwardOp,
    y_delta: &Seq,
    delta: f64,
    p: f64,
    opts: &SolverOptions,
) -> Result<DiscrepancySearch> {
    rule.validate()?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Argument(format!(
            "noise level delta must be positive and finite, got {delta}"
        )));
    }
    // Validates dimensions and the exponent before any branch below.
    let _ = TikhonovProblem::new(op, y_delta, 0.0, p)?;

    let tau = rule.tau;
    let ny = y_delta.norm(NormKind::L2);
    if ny <= tau * delta {
        return Ok(DiscrepancySearch {
            chosen: ChosenAlpha {
                alpha: AlphaChoice::ZeroSolution,
                discrepancy: ny,
                rule: RuleKind::Discrepancy,
                solves_used: 0,
            },
            trace: Vec::new(),
            solution: None,
            all_converged: true,
        });
    }

    // Bracket: alpha_max defaults to the zero-solution threshold, where the
    // discrepancy is the data norm (> tau*delta here) with no solve needed.
    let alpha0 = zero_threshold_alpha(op, y_delta, p)?;
    let mut hi0 = rule.alpha_max.unwrap_or(alpha0);
    let lo0 = rule.alpha_min.unwrap_or(1e-12 * hi0);
    if lo0 >= hi0 {
        // validate() rejected inverted explicit pairs, so this is an
        // explicit alpha_min at or past the analytic zero threshold. The
        // evaluation at alpha_min below settles the search — its minimizer
        // is zero, so the discrepancy is the full data norm — and the
        // report should say so rather than reject the bracket shape.
        hi0 = 2.0 * lo0;
    }
    if !(lo0 > 0.0 && lo0.is_finite()) {
        return Err(Error::Argument(format!(
            "alpha bracket is empty: [{lo0:.6e}, {hi0:.6e}]"
        )));
    }

    let mut st = SearchState {
        op,
        y: y_delta,
        p,
        opts,
        trace: Vec::new(),
        solves: 0,
        all_converged: true,
        warm: None,
    };
    let band = |d: f64| (delta..=tau * delta).contains(&d);

    let r_lo = st.eval(lo0)?;
    let d_lo0 = r_lo.residual_norm;
    if band(d_lo0) {
        return Ok(st.finish(lo0, r_lo));
    }
    if d_lo0 > tau * delta {
        return Err(Error::Bracket(format!(
            "alpha_min {lo0:.6e} too large: discrepancy {d_lo0:.6e} already exceeds \
             tau*delta = {:.6e}",
            tau * delta
        )));
    }

    let d_hi0 = if let Some(amax) = rule.alpha_max {
        let r = st.eval(amax)?;
        let d = r.residual_norm;
        if band(d) {
            return Ok(st.finish(amax, r));
        }
        if d < delta {
            return Err(Error::Bracket(format!(
                "alpha_max {amax:.6e} too small: discrepancy {d:.6e} is below \
                 delta = {delta:.6e}"
            )));
        }
        d
    } else {
        st.trace.push(TracePoint {
            alpha: hi0,
            discrepancy: ny,
            iterations: 0,
        });
        ny
    };

    let (mut lo, mut hi) = (lo0, hi0);
    let (mut d_lo, mut d_hi) = (d_lo0, d_hi0);
    for _ in 0..rule.max_bisections {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        let r = st.eval(mid)?;
        let d = r.residual_norm;
        if band(d) {
            return Ok(st.finish(mid, r));
        }
        if d < delta {
            lo = mid;
            d_lo = d;
        } else {
            hi = mid;
            d_hi = d;
        }
    }
    Err(Error::BandNotReached {
        solves: st.solves,
        alpha_lo: lo,
        alpha_hi: hi,
        d_lo,
        d_hi,
    })
}

/// Run the discrepancy principle with default solver options and return
/// just the choice.
pub fn choose_discrepancy(
    rule: &DiscrepancyRule,
    op: &ForwardOp,
    y_delta: &Seq,
    delta: f64,
    p: f64,
) -> Result<ChosenAlpha> {
    Ok(discrepancy_search(rule, op, y_delta, delta, p, &SolverOptions::default())?.chosen)
}
