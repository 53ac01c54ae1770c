//! End-to-end rate experiments.
//!
//! An [`ExperimentSpec`] names an operator, a ground truth, a tail bound, a
//! geometric noise grid, and a parameter rule. [`run_experiment`] certifies
//! a gamma table for the operator, synthesizes exact-norm noise per grid
//! point, picks `alpha` by the requested rule, solves, and tabulates the
//! observed l1 error against the guaranteed bound, finishing with a
//! log-log slope fit of error against noise level.
//!
//! Reports serialize three ways: `report.csv` (one row per noise level,
//! stable byte-for-byte for a fixed spec and seed), `report.json` (rows
//! plus metadata), and `plotdata.dat` (log10 columns for plotting).

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{Family, ForwardOp, OperatorSpec};
use crate::rate::{theoretical_bound, BoundRule, RateFunction};
use crate::rules::{
    choose_a_priori, discrepancy_search, APrioriRule, AlphaChoice, DiscrepancyRule,
};
use crate::seq::{compensated_sum, NormKind, Seq};
use crate::solver::{SolverOptions, TikhonovProblem};
use crate::witness::{compute_gamma_table, diagonal_gamma, GammaMethod, GammaTable};

/// Ground-truth description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum XDaggerSpec {
    /// Zeros except `values[i]` at 1-based index `support[i]`.
    Sparse { support: Vec<usize>, values: Vec<f64> },
    /// `x_k = k^(-s)` with `s > 1`.
    PowerTail { s: f64 },
    /// Explicit coefficients, length `N`.
    Custom { values: Vec<f64> },
}

impl XDaggerSpec {
    /// Materialize the ground truth in an `N`-dimensional coefficient space.
    pub fn build(&self, n: usize) -> Result<Seq> {
        match self {
            XDaggerSpec::Sparse { support, values } => {
                if support.len() != values.len() {
                    return Err(Error::Argument(format!(
                        "sparse ground truth has {} support indices but {} values",
                        support.len(),
                        values.len()
                    )));
                }
                let mut x = vec![0.0; n];
                let mut seen = vec![false; n];
                for (&k, &v) in support.iter().zip(values) {
                    if k == 0 || k > n {
                        return Err(Error::Argument(format!(
                            "support index {k} is out of range 1..={n}"
                        )));
                    }
                    if seen[k - 1] {
                        return Err(Error::Argument(format!(
                            "support index {k} appears twice"
                        )));
                    }
                    seen[k - 1] = true;
                    x[k - 1] = v;
                }
                Seq::new(x)
            }
            XDaggerSpec::PowerTail { s } => {
                if !s.is_finite() || *s <= 1.0 {
                    return Err(Error::Argument(format!(
                        "power-tail exponent must satisfy s > 1, got {s}"
                    )));
                }
                Seq::new((1..=n).map(|k| (k as f64).powf(-s)).collect())
            }
            XDaggerSpec::Custom { values } => {
                if values.len() != n {
                    return Err(Error::Argument(format!(
                        "custom ground truth has {} entries, expected {n}",
                        values.len()
                    )));
                }
                Seq::new(values.clone())
            }
        }
    }
}

/// Geometric noise grid from `d_min` to `d_max`. When `points` is omitted
/// it defaults to 12 per decade, clamped to `[2, 40]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaGrid {
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl DeltaGrid {
    /// The grid values, ascending.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !self.d_min.is_finite() || self.d_min <= 0.0 {
            return Err(Error::Argument(format!(
                "d_min must be positive and finite, got {}",
                self.d_min
            )));
        }
        if !self.d_max.is_finite() || self.d_max < self.d_min {
            return Err(Error::Argument(format!(
                "d_max must be finite and at least d_min, got {}",
                self.d_max
            )));
        }
        let points = match self.points {
            Some(p) => {
                if p < 2 {
                    return Err(Error::Argument(format!(
                        "delta grid needs at least 2 points, got {p}"
                    )));
                }
                p
            }
            None => {
                let decades = (self.d_max / self.d_min).log10();
                ((12.0 * decades).ceil() as usize).clamp(2, 40)
            }
        };
        let ratio = self.d_max / self.d_min;
        Ok((0..points)
            .map(|i| self.d_min * ratio.powf(i as f64 / (points - 1) as f64))
            .collect())
    }
}

/// Parameter rule named by a config file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RuleSpec {
    APriori {
        #[serde(default = "default_c")]
        c1: f64,
        #[serde(default = "default_c")]
        c2: f64,
    },
    Discrepancy {
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_max: Option<f64>,
        #[serde(default = "default_max_bisections")]
        max_bisections: usize,
    },
}

fn default_c() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    1.5
}

fn default_max_bisections() -> usize {
    60
}

/// Solver controls as they appear in config files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_restart")]
    pub restart: bool,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

fn default_restart() -> bool {
    SolverOptions::default().restart
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverConfig {
            tol: o.tol,
            max_iter: o.max_iter,
            restart: o.restart,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            restart: self.restart,
        }
    }
}

/// Gamma-table controls as they appear in config files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    #[serde(default = "default_gamma_n_max")]
    pub n_max: usize,
    #[serde(default = "default_gamma_method")]
    pub method: GammaMethod,
    /// Extend the certified levels to the full dimension with the diagonal
    /// closed form (Diagonal operators only).
    #[serde(default)]
    pub extend_closed_form: bool,
}

fn default_gamma_n_max() -> usize {
    5
}

fn default_gamma_method() -> GammaMethod {
    GammaMethod::BruteForce
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig {
            n_max: default_gamma_n_max(),
            method: default_gamma_method(),
            extend_closed_form: false,
        }
    }
}

/// Complete description of one rate experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub operator: OperatorSpec,
    pub x_dagger: XDaggerSpec,
    pub mu: f64,
    pub delta_grid: DeltaGrid,
    pub rule: RuleSpec,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub gamma: GammaConfig,
}

fn default_p() -> f64 {
    2.0
}

/// One noise level's outcome. `alpha` is finite for a solved row, infinite
/// when the rule returned the zero solution, and NaN when the row failed;
/// a failed row also carries NaN discrepancy and error and `converged =
/// false`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub alpha: f64,
    pub discrepancy: f64,
    pub error_l1: f64,
    pub phi_delta: f64,
    pub bound: f64,
    /// Solver iterations summed over every solve this row triggered.
    pub solver_iters: usize,
    pub converged: bool,
    pub zero_solution: bool,
}

/// Metadata echoed into `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ReportMeta {
    pub spec: ExperimentSpec,
    pub gamma_table: GammaTable,
    /// Closed-form levels appended beyond the certified table.
    pub extended_levels: usize,
    pub truncation_gap: f64,
    pub rows_converged: usize,
    pub generated_unix_seconds: u64,
    pub version: String,
}

/// Everything [`run_experiment`] produces.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    /// One row per grid point, ascending in `delta`.
    pub rows: Vec<DeltaRow>,
    /// Least-squares slope of `log10 error_l1` against `log10 delta` over
    /// converged rows with positive error (NaN when fewer than two).
    pub slope: f64,
    /// Every row satisfies `error_l1 <= bound` (failed rows count as
    /// violations).
    pub bound_satisfied: bool,
    pub metadata: ReportMeta,
}

/// Additive Gaussian-direction noise of exact Euclidean norm `delta`:
/// `y + delta * g / ||g||_2` with `g` standard normal (redrawn in the
/// measure-zero event `g = 0`), from a generator seeded with `seed`.
pub fn make_noise(y_true: &Seq, delta: f64, seed: u64) -> Result<Seq> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Argument(format!(
            "noise level delta must be positive and finite, got {delta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = y_true.len();
    loop {
        let g: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let norm = compensated_sum(g.iter().map(|v| v * v)).sqrt();
        if norm > 0.0 {
            return Seq::new(
                y_true
                    .iter()
                    .zip(&g)
                    .map(|(y, gi)| y + delta * gi / norm)
                    .collect(),
            );
        }
    }
}

/// Ordinary least-squares slope of `y` against `x` over `(x, y)` pairs.
/// NaN when fewer than two points or when `x` has no spread.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx = compensated_sum(points.iter().map(|p| p.0)) / n;
    let my = compensated_sum(points.iter().map(|p| p.1)) / n;
    let sxx = compensated_sum(points.iter().map(|p| (p.0 - mx) * (p.0 - mx)));
    if sxx <= 0.0 {
        return f64::NAN;
    }
    let sxy = compensated_sum(points.iter().map(|p| (p.0 - mx) * (p.1 - my)));
    sxy / sxx
}

fn failed_row(delta: f64, phi_delta: f64, bound: f64) -> DeltaRow {
    DeltaRow {
        delta,
        alpha: f64::NAN,
        discrepancy: f64::NAN,
        error_l1: f64::NAN,
        phi_delta,
        bound,
        solver_iters: 0,
        converged: false,
        zero_solution: false,
    }
}

/// Certify the spec's gamma table and assemble the rate function around
/// the given ground truth, honoring `gamma.extend_closed_form`. Returns
/// the rate function and the number of closed-form levels appended.
pub fn build_rate_function(
    spec: &ExperimentSpec,
    op: &ForwardOp,
    x_dagger: &Seq,
) -> Result<(RateFunction, usize)> {
    let table = compute_gamma_table(op, spec.mu, spec.gamma.n_max, spec.gamma.method)?;
    if spec.gamma.extend_closed_form {
        let a = match op.family() {
            Family::Diagonal { a } => *a,
            other => {
                return Err(Error::Argument(format!(
                    "extend_closed_form needs a Diagonal operator, got {}",
                    other.name()
                )))
            }
        };
        let ext: Vec<f64> = ((spec.gamma.n_max + 1)..=op.n())
            .map(|n| diagonal_gamma(a, n))
            .collect();
        let levels = ext.len();
        Ok((
            RateFunction::with_extended_gammas(table, x_dagger, &ext)?,
            levels,
        ))
    } else {
        Ok((RateFunction::new(table, x_dagger)?, 0))
    }
}

/// Run the full pipeline for one spec. The gamma table is certified once
/// and reused across the grid; an infeasible witness aborts the run with
/// its certificate details. Per-row failures (non-convergence, bracket or
/// band trouble) flag the row instead of aborting.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let op = spec.operator.build()?;
    let x_dagger = spec.x_dagger.build(op.n())?;
    let (rf, extended_levels) = build_rate_function(spec, &op, &x_dagger)?;

    let y_true = op.apply(&x_dagger)?;
    let deltas = spec.delta_grid.values()?;
    let opts = spec.solver.options();
    let bound_rule = match spec.rule {
        RuleSpec::APriori { c1, c2 } => BoundRule::APriori {
            c1,
            c2,
            p: spec.p,
        },
        RuleSpec::Discrepancy { tau, .. } => BoundRule::Discrepancy { tau },
    };
    let x_dagger_l1 = x_dagger.norm(NormKind::L1);

    let mut rows = Vec::with_capacity(deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let y_delta = make_noise(&y_true, delta, spec.seed ^ (i as u64))?;
        let phi_delta = rf.phi(delta)?.value;
        let bound = theoretical_bound(&rf, &bound_rule, spec.mu, delta)?;
        let row = match spec.rule {
            RuleSpec::APriori { c1, c2 } => {
                let rule = APrioriRule::new(c1, c2, &rf, spec.p)?;
                let alpha = choose_a_priori(&rule, delta)?.alpha.as_f64();
                let problem = TikhonovProblem::new(&op, &y_delta, alpha, spec.p)?;
                match problem.solve(&opts, None) {
                    Ok(r) => DeltaRow {
                        delta,
                        alpha,
                        discrepancy: r.residual_norm,
                        error_l1: r.x.sub(&x_dagger)?.norm(NormKind::L1),
                        phi_delta,
                        bound,
                        solver_iters: r.iterations,
                        converged: r.converged,
                        zero_solution: false,
                    },
                    Err(Error::Argument(e)) => return Err(Error::Argument(e)),
                    Err(_) => failed_row(delta, phi_delta, bound),
                }
            }
            RuleSpec::Discrepancy {
                tau,
                alpha_min,
                alpha_max,
                max_bisections,
            } => {
                let rule = DiscrepancyRule {
                    tau,
                    alpha_min,
                    alpha_max,
                    max_bisections,
                };
                match discrepancy_search(&rule, &op, &y_delta, delta, spec.p, &opts) {
                    Ok(search) => {
                        let iters: usize = search.trace.iter().map(|t| t.iterations).sum();
                        match (search.chosen.alpha, search.solution) {
                            (AlphaChoice::ZeroSolution, _) => DeltaRow {
                                delta,
                                alpha: f64::INFINITY,
                                discrepancy: search.chosen.discrepancy,
                                error_l1: x_dagger_l1,
                                phi_delta,
                                bound,
                                solver_iters: 0,
                                converged: true,
                                zero_solution: true,
                            },
                            (AlphaChoice::Finite(a), Some(r)) => DeltaRow {
                                delta,
                                alpha: a,
                                discrepancy: r.residual_norm,
                                error_l1: r.x.sub(&x_dagger)?.norm(NormKind::L1),
                                phi_delta,
                                bound,
                                solver_iters: iters,
                                converged: r.converged && search.all_converged,
                                zero_solution: false,
                            },
                            (AlphaChoice::Finite(_), None) => {
                                return Err(Error::Numerical(
                                    "finite discrepancy choice lost its solution".into(),
                                ))
                            }
                        }
                    }
                    Err(Error::Argument(e)) => return Err(Error::Argument(e)),
                    Err(_) => failed_row(delta, phi_delta, bound),
                }
            }
        };
        rows.push(row);
    }

    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged && r.error_l1.is_finite() && r.error_l1 > 0.0)
        .map(|r| (r.delta.log10(), r.error_l1.log10()))
        .collect();
    let slope = fit_slope(&pts);
    let bound_satisfied = rows.iter().all(|r| r.error_l1 <= r.bound);
    let rows_converged = rows.iter().filter(|r| r.converged).count();
    let generated_unix_seconds = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    Ok(ExperimentReport {
        rows,
        slope,
        bound_satisfied,
        metadata: ReportMeta {
            spec: spec.clone(),
            gamma_table: rf.table().clone(),
            extended_levels,
            truncation_gap: rf.truncation_gap(),
            rows_converged,
            generated_unix_seconds,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    })
}

/// Write the per-row table as CSV. The header and the default float
/// rendering are stable, so equal reports serialize to equal bytes
/// (infinities print as `inf`, failed entries as `NaN`).
pub fn write_report_csv<W: std::io::Write>(report: &ExperimentReport, w: &mut W) -> Result<()> {
    writeln!(
        w,
        "delta,alpha,discrepancy,error_l1,phi_delta,bound,solver_iters,converged"
    )?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.delta,
            r.alpha,
            r.discrepancy,
            r.error_l1,
            r.phi_delta,
            r.bound,
            r.solver_iters,
            r.converged
        )?;
    }
    Ok(())
}

/// Write `log10 delta`, `log10 error_l1`, `log10 bound` columns for rows
/// where all three are finite and positive.
pub fn write_plotdata<W: std::io::Write>(report: &ExperimentReport, w: &mut W) -> Result<()> {
    for r in &report.rows {
        if r.error_l1.is_finite() && r.error_l1 > 0.0 && r.bound.is_finite() && r.bound > 0.0 {
            writeln!(
                w,
                "{} {} {}",
                r.delta.log10(),
                r.error_l1.log10(),
                r.bound.log10()
            )?;
        }
    }
    Ok(())
}

/// Write `report.csv`, `report.json`, and `plotdata.dat` into `dir`.
pub fn write_report_files(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    write_report_csv(report, &mut csv)?;
    std::fs::write(dir.join("report.csv"), csv)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    std::fs::write(dir.join("report.json"), json)?;
    let mut dat = Vec::new();
    write_plotdata(report, &mut dat)?;
    std::fs::write(dir.join("plotdata.dat"), dat)?;
    Ok(())
}
