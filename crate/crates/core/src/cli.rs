//! Command-line front end.
//!
//! Every subcommand reads the same JSON experiment spec (`--config`) and
//! writes machine-readable results under `--out` (default `out/`). Exit
//! codes: 0 success, 1 bad arguments or config, 2 numerical trouble
//! (non-convergence, bracketing, approximation misses), 3 failed
//! certification (infeasible witness or a sampled inequality violation).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{
    build_rate_function, make_noise, run_experiment, write_report_files, ExperimentSpec, RuleSpec,
};
use crate::rate::{check_vsc, SampleSpec};
use crate::rules::{
    choose_a_priori, discrepancy_search, APrioriRule, AlphaChoice, DiscrepancyRule,
};
use crate::seq::{NormKind, Seq};
use crate::solver::{SolveResult, TikhonovProblem};
use crate::witness::{check_range_closure, compute_gamma_table, constructive_approximation};

/// Largest sampled violation the `vsc-check` command tolerates before
/// failing with exit code 3.
pub const VSC_GATE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(
    name = "l1rate",
    version,
    about = "l1-regularized Tikhonov solves with certified convergence-rate experiments"
)]
struct Cli {
    /// JSON experiment spec.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the spec's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Write extra per-run trace files where the command has any.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one Tikhonov problem at a single noise level.
    Solve {
        /// Noise level used to synthesize the data.
        #[arg(long)]
        delta: f64,
        /// Regularization weight; omitted, the spec's rule chooses it.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the rate experiment over the spec's noise grid.
    Rates {
        /// Override the spec's rule: "a-priori" or "discrepancy".
        #[arg(long)]
        rule: Option<String>,
        /// Discrepancy band factor (discrepancy rule only).
        #[arg(long)]
        tau: Option<f64>,
        /// Lower window constant (a-priori rule only).
        #[arg(long)]
        c1: Option<f64>,
        /// Upper window constant (a-priori rule only).
        #[arg(long)]
        c2: Option<f64>,
    },
    /// Certify the gamma table for the spec's operator.
    Gamma {
        /// Additionally certify tables for mu in 0.1, 0.2, ..., 0.9.
        #[arg(long)]
        sweep: bool,
    },
    /// Sample the variational inequality behind the rate guarantee.
    VscCheck {
        /// Number of perturbations to sample.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Perturbation scale.
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
    },
    /// Constructively approximate a coordinate functional through the
    /// adjoint range.
    Density {
        /// 1-based coordinate to resolve.
        #[arg(long)]
        index: usize,
        /// Allowed leakage beyond the resolved prefix.
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Prefix length resolved exactly (defaults to `index`).
        #[arg(long)]
        prefix: Option<usize>,
    },
    /// Print and record operator diagnostics.
    Diagnose,
}

/// Parse `args` and run. Returns the process exit code instead of exiting
/// so tests can drive the binary in-process.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let Cli {
        config,
        seed,
        out,
        trace,
        command,
    } = cli;
    std::fs::create_dir_all(&out)?;
    let spec = load_spec(config.as_deref(), seed)?;
    match command {
        Command::Solve { delta, alpha } => cmd_solve(&spec, delta, alpha, &out),
        Command::Rates { rule, tau, c1, c2 } => {
            let mut spec = spec;
            apply_rule_overrides(&mut spec, rule.as_deref(), tau, c1, c2)?;
            cmd_rates(&spec, &out, trace)
        }
        Command::Gamma { sweep } => cmd_gamma(&spec, sweep, &out),
        Command::VscCheck { samples, amplitude } => cmd_vsc_check(&spec, samples, amplitude, &out),
        Command::Density { index, eps, prefix } => cmd_density(&spec, index, eps, prefix, &out),
        Command::Diagnose => cmd_diagnose(&spec, &out),
    }
}

fn load_spec(config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentSpec> {
    let path =
        config.ok_or_else(|| Error::Config("this command needs --config <spec.json>".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "config {} is not a valid experiment spec: {e}",
            path.display()
        ))
    })?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn apply_rule_overrides(
    spec: &mut ExperimentSpec,
    rule: Option<&str>,
    tau: Option<f64>,
    c1: Option<f64>,
    c2: Option<f64>,
) -> Result<()> {
    if let Some(name) = rule {
        spec.rule = match name {
            "a-priori" | "apriori" => RuleSpec::APriori { c1: 1.0, c2: 1.0 },
            "discrepancy" => RuleSpec::Discrepancy {
                tau: 1.5,
                alpha_min: None,
                alpha_max: None,
                max_bisections: 60,
            },
            other => {
                return Err(Error::Argument(format!(
                    "unknown rule \"{other}\"; expected \"a-priori\" or \"discrepancy\""
                )))
            }
        };
    }
    match &mut spec.rule {
        RuleSpec::APriori { c1: rc1, c2: rc2 } => {
            if tau.is_some() {
                return Err(Error::Argument(
                    "--tau only applies to the discrepancy rule".into(),
                ));
            }
            if let Some(v) = c1 {
                *rc1 = v;
            }
            if let Some(v) = c2 {
                *rc2 = v;
            }
        }
        RuleSpec::Discrepancy { tau: rt, .. } => {
            if c1.is_some() || c2.is_some() {
                return Err(Error::Argument(
                    "--c1/--c2 only apply to the a-priori rule".into(),
                ));
            }
            if let Some(v) = tau {
                *rt = v;
            }
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// What `solve` records. `alpha` is infinite when the rule returned the
/// zero solution.
#[derive(Debug, Serialize)]
struct SolutionDump {
    delta: f64,
    alpha: f64,
    zero_solution: bool,
    x: Seq,
    objective: f64,
    residual_norm: f64,
    optimality: f64,
    iterations: usize,
    converged: bool,
    error_l1: f64,
    solves_used: usize,
}

fn dump_from(
    delta: f64,
    alpha: f64,
    r: &SolveResult,
    x_dagger: &Seq,
    solves_used: usize,
) -> Result<SolutionDump> {
    Ok(SolutionDump {
        delta,
        alpha,
        zero_solution: false,
        x: r.x.clone(),
        objective: r.objective,
        residual_norm: r.residual_norm,
        optimality: r.optimality,
        iterations: r.iterations,
        converged: r.converged,
        error_l1: r.x.sub(x_dagger)?.norm(NormKind::L1),
        solves_used,
    })
}

fn cmd_solve(spec: &ExperimentSpec, delta: f64, alpha: Option<f64>, out: &Path) -> Result<()> {
    let op = spec.operator.build()?;
    let x_dagger = spec.x_dagger.build(op.n())?;
    let y_true = op.apply(&x_dagger)?;
    let y_delta = make_noise(&y_true, delta, spec.seed)?;
    let opts = spec.solver.options();

    let dump = if let Some(a) = alpha {
        let problem = TikhonovProblem::new(&op, &y_delta, a, spec.p)?;
        let r = problem.solve(&opts, None)?;
        dump_from(delta, a, &r, &x_dagger, 1)?
    } else {
        match spec.rule {
            RuleSpec::APriori { c1, c2 } => {
                let (rf, _) = build_rate_function(spec, &op, &x_dagger)?;
                let rule = APrioriRule::new(c1, c2, &rf, spec.p)?;
                let a = choose_a_priori(&rule, delta)?.alpha.as_f64();
                let problem = TikhonovProblem::new(&op, &y_delta, a, spec.p)?;
                let r = problem.solve(&opts, None)?;
                dump_from(delta, a, &r, &x_dagger, 1)?
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
                let search = discrepancy_search(&rule, &op, &y_delta, delta, spec.p, &opts)?;
                match (search.chosen.alpha, search.solution) {
                    (AlphaChoice::ZeroSolution, _) => SolutionDump {
                        delta,
                        alpha: f64::INFINITY,
                        zero_solution: true,
                        x: Seq::zeros(op.n())?,
                        objective: search.chosen.discrepancy.powf(spec.p),
                        residual_norm: search.chosen.discrepancy,
                        optimality: 0.0,
                        iterations: 0,
                        converged: true,
                        error_l1: x_dagger.norm(NormKind::L1),
                        solves_used: 0,
                    },
                    (AlphaChoice::Finite(a), Some(r)) => {
                        let mut d = dump_from(delta, a, &r, &x_dagger, search.chosen.solves_used)?;
                        d.converged = r.converged && search.all_converged;
                        d
                    }
                    (AlphaChoice::Finite(_), None) => {
                        return Err(Error::Numerical(
                            "finite discrepancy choice lost its solution".into(),
                        ))
                    }
                }
            }
        }
    };

    write_json(&out.join("solution.json"), &dump)?;
    println!(
        "solve: delta {:.6e}, alpha {}, residual {:.6e}, error_l1 {:.6e}, iterations {}",
        dump.delta, dump.alpha, dump.residual_norm, dump.error_l1, dump.iterations
    );
    println!("wrote {}", out.join("solution.json").display());
    if !dump.converged {
        return Err(Error::Numerical(format!(
            "solver did not converge within {} iterations",
            dump.iterations
        )));
    }
    Ok(())
}

fn cmd_rates(spec: &ExperimentSpec, out: &Path, trace: bool) -> Result<()> {
    let report = run_experiment(spec)?;
    write_report_files(&report, out)?;
    println!(
        "rates: {} rows ({} converged), slope {:.4}, bound_satisfied {}",
        report.rows.len(),
        report.metadata.rows_converged,
        report.slope,
        report.bound_satisfied
    );
    println!(
        "wrote {}, {}, {}",
        out.join("report.csv").display(),
        out.join("report.json").display(),
        out.join("plotdata.dat").display()
    );
    if trace {
        let written = write_traces(spec, out)?;
        if written > 0 {
            println!("wrote {written} bisection traces under {}", out.display());
        } else {
            println!("trace: the a-priori rule solves once per row; no traces to write");
        }
    }
    Ok(())
}

/// Re-run the per-row discrepancy searches (deterministic, same seeds) and
/// dump each evaluation trace as `trace_row_NN.csv`.
fn write_traces(spec: &ExperimentSpec, out: &Path) -> Result<usize> {
    let (tau, alpha_min, alpha_max, max_bisections) = match spec.rule {
        RuleSpec::Discrepancy {
            tau,
            alpha_min,
            alpha_max,
            max_bisections,
        } => (tau, alpha_min, alpha_max, max_bisections),
        RuleSpec::APriori { .. } => return Ok(0),
    };
    let rule = DiscrepancyRule {
        tau,
        alpha_min,
        alpha_max,
        max_bisections,
    };
    let op = spec.operator.build()?;
    let x_dagger = spec.x_dagger.build(op.n())?;
    let y_true = op.apply(&x_dagger)?;
    let opts = spec.solver.options();
    let mut written = 0;
    for (i, &delta) in spec.delta_grid.values()?.iter().enumerate() {
        let y_delta = make_noise(&y_true, delta, spec.seed ^ (i as u64))?;
        let search = match discrepancy_search(&rule, &op, &y_delta, delta, spec.p, &opts) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let mut text = String::from("alpha,discrepancy,iterations\n");
        for t in &search.trace {
            text.push_str(&format!("{},{},{}\n", t.alpha, t.discrepancy, t.iterations));
        }
        std::fs::write(out.join(format!("trace_row_{i:02}.csv")), text)?;
        written += 1;
    }
    Ok(written)
}

fn cmd_gamma(spec: &ExperimentSpec, sweep: bool, out: &Path) -> Result<()> {
    let op = spec.operator.build()?;
    let table = compute_gamma_table(&op, spec.mu, spec.gamma.n_max, spec.gamma.method)?;
    write_json(&out.join("gamma.json"), &table)?;
    let rendered: Vec<String> = table.gammas.iter().map(|g| format!("{g:.6}")).collect();
    println!(
        "gamma: mu {}, levels 1..={}, values [{}]",
        spec.mu,
        spec.gamma.n_max,
        rendered.join(", ")
    );
    println!("wrote {}", out.join("gamma.json").display());
    if sweep {
        let mut tables = Vec::new();
        for i in 1..=9 {
            let mu = i as f64 / 10.0;
            tables.push(compute_gamma_table(
                &op,
                mu,
                spec.gamma.n_max,
                spec.gamma.method,
            )?);
        }
        write_json(&out.join("gamma_sweep.json"), &tables)?;
        println!("wrote {}", out.join("gamma_sweep.json").display());
    }
    Ok(())
}

fn cmd_vsc_check(spec: &ExperimentSpec, samples: usize, amplitude: f64, out: &Path) -> Result<()> {
    let op = spec.operator.build()?;
    let x_dagger = spec.x_dagger.build(op.n())?;
    let (rf, _) = build_rate_function(spec, &op, &x_dagger)?;
    let sampler = SampleSpec {
        count: samples,
        seed: spec.seed,
        amplitude,
    };
    let report = check_vsc(&op, &x_dagger, &rf, spec.mu, &sampler)?;
    write_json(&out.join("vsc.json"), &report)?;
    println!(
        "vsc-check: {} samples, max violation {:.6e}, prefix estimate max {:.6e}",
        report.samples_checked, report.max_violation, report.pm_max_violation
    );
    println!("wrote {}", out.join("vsc.json").display());
    vsc_verdict(report.max_violation)
}

/// Gate behind `vsc-check`: tolerate rounding-scale slack, fail beyond it.
fn vsc_verdict(max_violation: f64) -> Result<()> {
    if max_violation > VSC_GATE {
        return Err(Error::Vsc { max_violation });
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DensityDump {
    index: usize,
    prefix: usize,
    eps: f64,
    range_distance: f64,
    prefix_error: f64,
    tail_error: f64,
    eta: Seq,
    xi_tilde: Seq,
}

fn cmd_density(
    spec: &ExperimentSpec,
    index: usize,
    eps: f64,
    prefix: Option<usize>,
    out: &Path,
) -> Result<()> {
    let op = spec.operator.build()?;
    if index == 0 || index > op.n() {
        return Err(Error::Argument(format!(
            "coordinate index is 1-based and must lie in 1..={}, got {index}",
            op.n()
        )));
    }
    let n = prefix.unwrap_or(index);
    let mut target = vec![0.0; op.n()];
    target[index - 1] = 1.0;
    let target = Seq::new(target)?;
    let range_distance = check_range_closure(&op, index)?;
    let (eta, xi_tilde) = constructive_approximation(&op, &target, n, eps)?;
    let mut prefix_error = 0.0f64;
    let mut tail_error = 0.0f64;
    for k in 0..op.n() {
        let d = (xi_tilde[k] - target[k]).abs();
        if k < n {
            prefix_error = prefix_error.max(d);
        } else {
            tail_error = tail_error.max(d);
        }
    }
    let dump = DensityDump {
        index,
        prefix: n,
        eps,
        range_distance,
        prefix_error,
        tail_error,
        eta,
        xi_tilde,
    };
    write_json(&out.join("density.json"), &dump)?;
    println!(
        "density: coordinate {index}, prefix {n}, eps {eps:.3e}: prefix error {:.3e}, \
         tail error {:.3e}, range distance {:.3e}",
        dump.prefix_error, dump.tail_error, dump.range_distance
    );
    println!("wrote {}", out.join("density.json").display());
    Ok(())
}

fn cmd_diagnose(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let op = spec.operator.build()?;
    let d = op.diagnose();
    write_json(&out.join("diagnostics.json"), &d)?;
    println!(
        "diagnose: {} ({}x{}), sigma in [{:.6e}, {:.6e}], injective {}",
        op.family().name(),
        op.m(),
        op.n(),
        d.smallest_singular_value,
        d.largest_singular_value,
        d.injective,
    );
    let decay: Vec<String> = d.column_decay.iter().map(|c| format!("{c:.3e}")).collect();
    println!("column norms: [{}]", decay.join(", "));
    println!("note: {}", d.note);
    println!("wrote {}", out.join("diagnostics.json").display());
    Ok(())
}
