//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 solver failure (or a
//! reproduced experiment failing its checks), 3 I/O or cache failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::cache::{ReferenceCache, CACHE_DIR_ENV};
use crate::analysis::energy_gap_bound;
use crate::analysis::stability::{
    cnfd_max_amplification, sigma_from_sup, siefd_max_amplification, siefd_tau_bound, TauBound,
};
use crate::error::{Error, Result};
use crate::grid::quad_l1;
use crate::nonlinearity::NonlinearityParams;
use crate::schemes::{Fallback, Scheme, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};

use super::config::plan_from_config;
use super::output::{emit_csv, energy_csv_string, snapshot_csv_string, write};
use super::plan::{ExperimentPlan, PlanKind, TruthSource};
use super::problem::{CustomProblem, Problem};
use super::reproduce::{reproduce, Target};
use super::runner::{run, run_with_threads, RowStatus, SweepResult, DRIFT_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "rlogkg",
    version,
    about = "Energy-preserving finite difference solvers for the regularized logarithmic Klein-Gordon equation",
    after_help = "Exit status: 0 ok, 1 usage error, 2 solver failure or failed checks, 3 I/O error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration to time T and report its error and energy drift.
    Solve(RunArgs),
    /// Run a sweep described by a plan file.
    Sweep(SweepArgs),
    /// Run one configuration and record the discrete energy at every step.
    EnergyDrift(DriftArgs),
    /// Print the semi-implicit step bound and check a step against it.
    StabilityCheck(StabilityArgs),
    /// Compare the regularized and unregularized energies of the initial data.
    GapBound(GapArgs),
    /// Rerun a shipped experiment and check its convergence behaviour.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Initial data: example1-gausson, example2-cos-sin or custom (with --phi/--gamma).
    #[arg(long, default_value = "example1-gausson")]
    problem: String,
    /// Expression in x for u(x, 0) of a custom problem.
    #[arg(long, requires = "gamma")]
    phi: Option<String>,
    /// Expression in x for u_t(x, 0) of a custom problem.
    #[arg(long, requires = "phi")]
    gamma: Option<String>,
    /// Regularization parameter.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Strength of the logarithmic term.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Periodic domain [a, b] [default: the problem's own, [-16, 16] or [-1, 1]].
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_negative_numbers = true)]
    domain: Option<Vec<f64>>,
    /// Number of cells.
    #[arg(long = "N", default_value_t = 1024)]
    n: usize,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// Scheme: cnfd or siefd.
    #[arg(long, default_value = "cnfd")]
    scheme: Scheme,
    /// Time step.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Final time.
    #[arg(long = "T", default_value_t = 1.0)]
    t_final: f64,
    /// Relative residual tolerance of the nonlinear solve.
    #[arg(long, default_value_t = DEFAULT_NEWTON_TOL)]
    newton_tol: f64,
    /// Iteration cap of the nonlinear solve.
    #[arg(long, default_value_t = DEFAULT_NEWTON_MAX_ITER)]
    newton_max_iter: usize,
    /// What to do when Newton stalls: damped-fixed-point or fail.
    #[arg(long, default_value = "damped-fixed-point")]
    fallback: Fallback,
}

#[derive(Args, Debug, Clone)]
struct RunEnv {
    /// Worker threads [default: one per core].
    #[arg(long)]
    threads: Option<usize>,
    /// Reference cache directory [default: $RLOGKG_CACHE_DIR, else <tmp>/rlogkg-cache].
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Error measure: exact, reference or none [default: exact when available, else none].
    #[arg(long)]
    truth: Option<TruthSource>,
    /// Read the configuration from a plan file instead of flags.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// CSV output path [default: standard output].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    env: RunEnv,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Plan file describing the sweep.
    #[arg(long)]
    plan: PathBuf,
    /// CSV output path [default: the plan's output.csv, else standard output].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    env: RunEnv,
}

#[derive(Args, Debug)]
struct DriftArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Times at which to record the waveform.
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Vec<f64>,
    /// Read the configuration from a plan file instead of flags.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// CSV output path; the energy history goes to <stem>-energy.csv and
    /// snapshots to <stem>-snapshots.csv beside it [default: standard output, summary only].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    env: RunEnv,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Scheme: cnfd or siefd.
    #[arg(long, default_value = "siefd")]
    scheme: Scheme,
    /// Bound on |u| entering sigma_max.
    #[arg(long, default_value_t = 1.0)]
    u_bound: f64,
    /// A time step to test against the bound.
    #[arg(long)]
    tau: Option<f64>,
    /// Also run the scheme at these multiples of the bound and report growth.
    #[arg(long, value_delimiter = ',')]
    probe: Vec<f64>,
    /// Steps per probe run.
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// CSV output path for probe rows.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    env: RunEnv,
}

#[derive(Args, Debug)]
struct GapArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// Experiment to rerun.
    #[arg(value_parser = ["table1", "table2", "table3", "fig1", "fig-energy"])]
    target: String,
    /// Use the full published resolutions instead of the desk-scale ones.
    #[arg(long)]
    paper_scale: bool,
    /// CSV output path [default: results/<target>.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    env: RunEnv,
}

/// Runs the command line `args` (including the program name), writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::DimensionMismatch { .. } | Error::Config(_) | Error::Plan(_) => {
            EXIT_USAGE
        }
        Error::NonConvergence { .. } | Error::Singular(_) => EXIT_SOLVER,
        Error::Io(_) | Error::CacheCorrupt { .. } => EXIT_IO,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Solve(a) => {
            let plan = match &a.plan {
                Some(p) => plan_from_config(p)?,
                None => {
                    let mut p = plan_from_flags(PlanKind::SingleSolve, &a.model, &a.solver)?;
                    if let Some(t) = a.truth {
                        p.truth = t;
                    }
                    p.validate()?;
                    p
                }
            };
            let result = execute(&plan, &a.env)?;
            report_rows(&result, a.out.as_deref().or(plan.output.csv.as_deref()), out, err)
        }
        Command::Sweep(a) => {
            let plan = plan_from_config(&a.plan)?;
            let result = execute(&plan, &a.env)?;
            write_trajectories(&plan, &result, a.out.as_deref(), err)?;
            report_rows(&result, a.out.as_deref().or(plan.output.csv.as_deref()), out, err)
        }
        Command::EnergyDrift(a) => {
            let plan = match &a.plan {
                Some(p) => plan_from_config(p)?,
                None => {
                    let mut p = plan_from_flags(PlanKind::EnergyDrift, &a.model, &a.solver)?;
                    p.output.snapshot_times = a.snapshot_times.clone();
                    p.validate()?;
                    p
                }
            };
            let result = execute(&plan, &a.env)?;
            write_trajectories(&plan, &result, a.out.as_deref(), err)?;
            for r in &result.rows {
                writeln!(
                    err,
                    "{} eps={} N={} tau={} steps={}: max relative energy drift {:.3e} ({}, tolerance {DRIFT_TOL:e})",
                    r.scheme, r.epsilon, r.n, r.tau, r.steps, r.energy_drift, r.status
                )?;
            }
            report_rows(&result, a.out.as_deref().or(plan.output.csv.as_deref()), out, err)
        }
        Command::StabilityCheck(a) => stability_check(&a, out, err),
        Command::GapBound(a) => {
            let (plan, p) = model_setup(&a.model)?;
            let g = plan.grid(a.model.n)?;
            let init = plan.problem.initial_data(&g)?;
            let gb = energy_gap_bound(&init.phi, &p, &g)?;
            writeln!(out, "gap = {:.17e}", gb.gap)?;
            writeln!(out, "bound = {:.17e}", gb.bound)?;
            writeln!(out, "l1 norm of phi = {:.17e}", quad_l1(&init.phi, &g)?)?;
            writeln!(out, "{}", if gb.holds() { "gap <= bound" } else { "gap EXCEEDS bound" })?;
            Ok(if gb.holds() { EXIT_OK } else { EXIT_SOLVER })
        }
        Command::Reproduce(a) => {
            let target: Target = a.target.parse()?;
            let cache = cache_for(&a.env)?;
            let rep = reproduce(target, a.paper_scale, &cache, a.env.threads)?;
            let path = a
                .out
                .clone()
                .unwrap_or_else(|| Path::new("results").join(format!("{}.csv", target.name())));
            for f in rep.write(&path)? {
                writeln!(err, "wrote {}", f.display())?;
            }
            for (label, r) in &rep.results {
                writeln!(out, "# {label}")?;
                summary(r, out)?;
            }
            for c in &rep.checks {
                writeln!(out, "{c}")?;
            }
            Ok(if rep.passed() { EXIT_OK } else { EXIT_SOLVER })
        }
    }
}

fn model_setup(m: &ModelArgs) -> Result<(ExperimentPlan, NonlinearityParams)> {
    let p = NonlinearityParams::new(m.lambda, m.epsilon)?;
    let problem = match (&m.phi, &m.gamma, m.problem.as_str()) {
        (Some(phi), Some(gamma), "custom") => Problem::Custom(CustomProblem::Expressions {
            phi: phi.clone(),
            gamma: gamma.clone(),
        }),
        (_, _, "custom") => {
            return Err(Error::Config("--problem custom needs --phi and --gamma".into()))
        }
        (Some(_), _, _) | (_, Some(_), _) => {
            return Err(Error::Config("--phi and --gamma need --problem custom".into()))
        }
        (None, None, name) => name.parse()?,
    };
    let mut plan = ExperimentPlan::new(PlanKind::SingleSolve, Scheme::Cnfd, problem);
    match &m.domain {
        Some(d) => plan.domain = (d[0], d[1]),
        None if matches!(plan.problem, Problem::Custom(_)) => {
            return Err(Error::Config("custom problems need --domain a b".into()))
        }
        None => {}
    }
    plan.lambda = m.lambda;
    plan.epsilons = vec![m.epsilon];
    plan.cells = vec![m.n];
    Ok((plan, p))
}

fn plan_from_flags(kind: PlanKind, m: &ModelArgs, s: &SolverArgs) -> Result<ExperimentPlan> {
    let (base, _) = model_setup(m)?;
    let mut plan = ExperimentPlan::new(kind, s.scheme, base.problem.clone());
    plan.domain = base.domain;
    plan.lambda = base.lambda;
    plan.epsilons = base.epsilons;
    plan.cells = base.cells;
    plan.taus = vec![s.tau];
    plan.t_final = s.t_final;
    plan.newton_tol = s.newton_tol;
    plan.newton_max_iter = s.newton_max_iter;
    plan.fallback = s.fallback;
    plan.truth = super::plan::default_truth(kind, &plan.problem, plan.lambda);
    if plan.truth == TruthSource::Reference {
        plan.truth = TruthSource::None;
    }
    Ok(plan)
}

fn cache_for(env: &RunEnv) -> Result<ReferenceCache> {
    let dir = env.cache_dir.clone().unwrap_or_else(ReferenceCache::default_dir);
    ReferenceCache::at(&dir).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("cannot use cache directory {} ({CACHE_DIR_ENV}): {io}", dir.display()),
        )),
        other => other,
    })
}

fn execute(plan: &ExperimentPlan, env: &RunEnv) -> Result<SweepResult> {
    if env.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let cache = if plan.truth == TruthSource::Reference {
        cache_for(env)?
    } else {
        ReferenceCache::in_memory()
    };
    match env.threads {
        Some(t) => run_with_threads(plan, &cache, t),
        None => run(plan, &cache),
    }
}

fn summary(result: &SweepResult, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "{:>6} {:>10} {:>6} {:>10} {:>11} {:>11} {:>11} {:>6} {:>6} {:>6} {:>10} status",
        "scheme", "epsilon", "N", "tau", "l2", "linf", "h1", "r_l2", "r_linf", "r_h1", "drift"
    )?;
    let rate = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.2}"));
    for r in &result.rows {
        writeln!(
            out,
            "{:>6} {:>10.4e} {:>6} {:>10.4e} {:>11.3e} {:>11.3e} {:>11.3e} {:>6} {:>6} {:>6} {:>10.2e} {}",
            r.scheme.name(),
            r.epsilon,
            r.n,
            r.tau,
            r.norms.l2,
            r.norms.linf,
            r.norms.h1,
            rate(r.rates[0]),
            rate(r.rates[1]),
            rate(r.rates[2]),
            r.energy_drift,
            r.status
        )?;
    }
    Ok(())
}

/// Writes the CSV (to a file or `out`) and returns 2 if any row failed.
fn report_rows(
    result: &SweepResult,
    path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    match path {
        Some(p) => {
            emit_csv(result, p)?;
            writeln!(err, "wrote {}", p.display())?;
            summary(result, out)?;
        }
        None => write!(out, "{}", super::output::csv_string(&result.rows))?,
    }
    let failed = result
        .rows
        .iter()
        .any(|r| matches!(r.status, RowStatus::NonConvergence));
    Ok(if failed { EXIT_SOLVER } else { EXIT_OK })
}

fn write_trajectories(
    plan: &ExperimentPlan,
    result: &SweepResult,
    out: Option<&Path>,
    err: &mut dyn Write,
) -> Result<()> {
    if result.trajectories.is_empty() {
        return Ok(());
    }
    let derived = |suffix: &str| {
        out.or(plan.output.csv.as_deref()).map(|csv| {
            let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
            csv.with_file_name(format!("{stem}-{suffix}.csv"))
        })
    };
    let energy = plan.output.energy_csv.clone().or_else(|| derived("energy"));
    let snaps = plan.output.snapshot_csv.clone().or_else(|| derived("snapshots"));
    if let Some(p) = energy {
        write(&p, &energy_csv_string(&result.trajectories))?;
        writeln!(err, "wrote {}", p.display())?;
    }
    if let Some(p) = snaps.filter(|_| !plan.output.snapshot_times.is_empty()) {
        write(&p, &snapshot_csv_string(&result.trajectories))?;
        writeln!(err, "wrote {}", p.display())?;
    }
    Ok(())
}

fn stability_check(a: &StabilityArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let (base, p) = model_setup(&a.model)?;
    let g = base.grid(a.model.n)?;
    if !(a.u_bound >= 0.0 && a.u_bound.is_finite()) {
        return Err(Error::domain(format!("--u-bound must be non-negative, got {}", a.u_bound)));
    }
    let sigma = sigma_from_sup(a.u_bound, &p);
    let h = g.h();
    writeln!(out, "h = {h}")?;
    writeln!(out, "sigma_max = {sigma:.6}")?;
    let siefd = siefd_tau_bound(h, sigma)?;
    let bound = match a.scheme {
        Scheme::Siefd => siefd,
        Scheme::Cnfd => TauBound::Unconditional,
    };
    match bound {
        TauBound::AtMost(b) => writeln!(out, "tau bound = {b:.9}")?,
        TauBound::Unconditional => writeln!(out, "tau bound = none ({} is unconditionally stable here)", a.scheme)?,
    }
    let mut code = EXIT_OK;
    if let Some(tau) = a.tau {
        if !(tau > 0.0) {
            return Err(Error::domain(format!("--tau must be positive, got {tau}")));
        }
        let amp = match a.scheme {
            Scheme::Siefd => siefd_max_amplification(h, g.cells(), tau, sigma),
            Scheme::Cnfd => cnfd_max_amplification(h, g.cells(), tau, sigma),
        };
        let ok = bound.admits(tau);
        writeln!(
            out,
            "tau = {tau}: {} (max frozen-coefficient amplification {amp:.6})",
            if ok { "stable" } else { "violates the bound" }
        )?;
    }
    if !a.probe.is_empty() {
        let mut plan = ExperimentPlan::new(PlanKind::StabilityProbe, a.scheme, base.problem.clone());
        plan.domain = base.domain;
        plan.lambda = base.lambda;
        plan.epsilons = base.epsilons.clone();
        plan.cells = base.cells.clone();
        plan.probe.tau_factors = a.probe.clone();
        plan.probe.steps = a.steps;
        plan.probe.u_bound = Some(a.u_bound);
        plan.validate()?;
        let result = execute(&plan, &a.env)?;
        for r in &result.rows {
            writeln!(
                out,
                "probe tau = {:.6} ({:.3}x bound): sup growth {:.3e} over {} steps, {}",
                r.tau,
                r.tau / siefd.value().unwrap_or(f64::NAN),
                r.growth,
                r.steps,
                r.status
            )?;
        }
        if let Some(p) = &a.out {
            emit_csv(&result, p)?;
            writeln!(err, "wrote {}", p.display())?;
        }
        if result.any_failure() {
            code = EXIT_SOLVER;
        }
    }
    Ok(code)
}
