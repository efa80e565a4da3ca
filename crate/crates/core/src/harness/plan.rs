use std::fmt;
use std::path::PathBuf;

use crate::analysis::stability::{sigma_from_sup, siefd_tau_bound, TauBound};
use crate::error::{Error, Result};
use crate::grid::{norm_linf, Grid1D};
use crate::nonlinearity::NonlinearityParams;
use crate::schemes::{Fallback, Scheme, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};

use super::problem::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanKind {
    /// Fixed mesh, halving `τ`.
    TemporalSweep,
    /// Fixed `τ`, halving `h`.
    SpatialSweep,
    /// Fixed mesh and `τ`, shrinking `ε`.
    EpsilonSweep,
    /// `ε`, `h` and `τ` refined together, paired by position.
    DiagonalSweep,
    EnergyDrift,
    /// Runs at multiples of the semi-implicit step bound, watching for growth.
    StabilityProbe,
    SingleSolve,
}

impl PlanKind {
    pub const ALL: [PlanKind; 7] = [
        PlanKind::TemporalSweep,
        PlanKind::SpatialSweep,
        PlanKind::EpsilonSweep,
        PlanKind::DiagonalSweep,
        PlanKind::EnergyDrift,
        PlanKind::StabilityProbe,
        PlanKind::SingleSolve,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PlanKind::TemporalSweep => "temporal-sweep",
            PlanKind::SpatialSweep => "spatial-sweep",
            PlanKind::EpsilonSweep => "epsilon-sweep",
            PlanKind::DiagonalSweep => "diagonal-sweep",
            PlanKind::EnergyDrift => "energy-drift",
            PlanKind::StabilityProbe => "stability-probe",
            PlanKind::SingleSolve => "single-solve",
        }
    }

    /// The parameter that varies between rows whose orders are reported.
    pub fn varied(&self) -> Option<Varied> {
        match self {
            PlanKind::TemporalSweep => Some(Varied::Tau),
            PlanKind::SpatialSweep | PlanKind::DiagonalSweep => Some(Varied::H),
            PlanKind::EpsilonSweep => Some(Varied::Epsilon),
            _ => None,
        }
    }
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PlanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlanKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = PlanKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown kind '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Varied {
    Tau,
    H,
    Epsilon,
}

/// What errors are measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthSource {
    /// Closed-form solution of the unregularized equation.
    Exact,
    /// Cached fine-grid Crank-Nicolson solution of the regularized equation.
    Reference,
    /// Norms of the solution itself.
    None,
}

impl std::str::FromStr for TruthSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(TruthSource::Exact),
            "reference" => Ok(TruthSource::Reference),
            "none" => Ok(TruthSource::None),
            other => Err(Error::Config(format!(
                "unknown truth '{other}' (expected exact, reference or none)"
            ))),
        }
    }
}

/// Resolution of the reference run relative to the sweep:
/// `N_ref = h_factor · max N` and `τ_ref = min τ / tau_factor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferencePolicy {
    pub h_factor: usize,
    pub tau_factor: usize,
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        Self {
            h_factor: 4,
            tau_factor: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSettings {
    /// Time steps as multiples of the semi-implicit bound.
    pub tau_factors: Vec<f64>,
    pub steps: usize,
    /// Bound on `‖u‖_∞` for `σ_max`; the initial `‖φ‖_∞` when absent.
    pub u_bound: Option<f64>,
    /// Growth of `‖u‖_∞` beyond this factor counts as blow-up.
    pub growth_limit: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            tau_factors: vec![0.9, 1.5],
            steps: 500,
            u_bound: None,
            growth_limit: 10.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    /// Energy time series (energy-drift plans).
    pub energy_csv: Option<PathBuf>,
    /// Waveforms at `snapshot_times` (energy-drift plans).
    pub snapshot_csv: Option<PathBuf>,
    pub snapshot_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub kind: PlanKind,
    pub scheme: Scheme,
    pub problem: Problem,
    pub domain: (f64, f64),
    pub t_final: f64,
    pub lambda: f64,
    pub epsilons: Vec<f64>,
    /// Cell counts `N`; the mesh size is `(b - a)/N`.
    pub cells: Vec<usize>,
    pub taus: Vec<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fallback: Fallback,
    pub truth: TruthSource,
    pub reference: ReferencePolicy,
    /// Whether observed orders are reported (and halving enforced).
    pub rates: bool,
    pub probe: ProbeSettings,
    pub output: OutputPaths,
}

/// One grid point of a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub epsilon: f64,
    pub n: usize,
    pub tau: f64,
}

const GRID_RATIO_TOL: f64 = 1e-9;

impl ExperimentPlan {
    /// A plan with the documented defaults for everything but the essentials.
    pub fn new(kind: PlanKind, scheme: Scheme, problem: Problem) -> Self {
        let domain = problem.default_domain().unwrap_or((0.0, 1.0));
        let truth = default_truth(kind, &problem, 1.0);
        Self {
            kind,
            scheme,
            domain,
            t_final: 1.0,
            lambda: 1.0,
            epsilons: vec![0.05],
            cells: Vec::new(),
            taus: Vec::new(),
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            fallback: Fallback::DampedFixedPoint,
            truth,
            reference: ReferencePolicy::default(),
            rates: kind.varied().is_some(),
            probe: ProbeSettings::default(),
            output: OutputPaths::default(),
            problem,
        }
    }

    pub fn length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn h(&self, n: usize) -> f64 {
        self.length() / n as f64
    }

    pub fn grid(&self, n: usize) -> Result<Grid1D> {
        Grid1D::new(self.domain.0, self.domain.1, n)
    }

    /// Number of steps of size `tau` reaching `T`.
    pub fn steps_for(&self, tau: f64) -> Result<usize> {
        steps_to(self.t_final, tau)
    }

    /// Every validation problem, each naming the offending field.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out: Vec<(&'static str, String)> = Vec::new();
        let mut push = |field: &'static str, msg: String| out.push((field, msg));
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && b > a) {
            push("plan.domain", format!("need a < b, got [{a}, {b}]"));
        }
        let probe = self.kind == PlanKind::StabilityProbe;
        if !probe && !(self.t_final > 0.0 && self.t_final.is_finite()) {
            push("plan.T", format!("T must be positive, got {}", self.t_final));
        }
        if !self.lambda.is_finite() {
            push("plan.lambda", format!("lambda must be finite, got {}", self.lambda));
        }
        if self.epsilons.is_empty() {
            push("grid.epsilon", "at least one value is required".into());
        }
        for &e in &self.epsilons {
            if !(e > 0.0 && e.is_finite()) {
                push("grid.epsilon", format!("epsilon must be positive, got {e}"));
            }
        }
        if self.cells.is_empty() {
            push("grid.N", "at least one mesh is required".into());
        }
        for &n in &self.cells {
            if n < 4 {
                push("grid.N", format!("N must be at least 4, got {n}"));
            }
        }
        if probe {
            if !self.taus.is_empty() {
                push("grid.tau", "stability probes derive tau from probe.tau_factors".into());
            }
            if self.probe.tau_factors.is_empty() {
                push("probe.tau_factors", "at least one factor is required".into());
            }
            for &f in &self.probe.tau_factors {
                if !(f > 0.0 && f.is_finite()) {
                    push("probe.tau_factors", format!("factors must be positive, got {f}"));
                }
            }
            if self.probe.steps < 2 {
                push("probe.steps", format!("need at least 2 steps, got {}", self.probe.steps));
            }
            if !(self.probe.growth_limit > 1.0) {
                push(
                    "probe.growth_limit",
                    format!("must exceed 1, got {}", self.probe.growth_limit),
                );
            }
            if let Some(u) = self.probe.u_bound {
                if !(u >= 0.0 && u.is_finite()) {
                    push("probe.u_bound", format!("must be non-negative, got {u}"));
                }
            }
        } else {
            if self.taus.is_empty() {
                push("grid.tau", "at least one time step is required".into());
            }
            for &t in &self.taus {
                if !(t > 0.0 && t.is_finite()) {
                    push("grid.tau", format!("tau must be positive, got {t}"));
                } else if self.t_final > 0.0 {
                    if let Err(e) = self.steps_for(t) {
                        push("grid.tau", e.to_string());
                    }
                }
            }
        }
        if !(self.newton_tol > 0.0 && self.newton_tol <= 1e-6) {
            push(
                "solver.newton_tol",
                format!("must lie in (0, 1e-6], got {}", self.newton_tol),
            );
        }
        if self.newton_max_iter == 0 {
            push("solver.newton_max_iter", "must be at least 1".into());
        }

        if self.kind == PlanKind::DiagonalSweep
            && !(self.epsilons.len() == self.cells.len() && self.cells.len() == self.taus.len())
        {
            push(
                "grid",
                format!(
                    "diagonal sweeps pair values by position; got {} epsilon, {} N and {} tau values",
                    self.epsilons.len(),
                    self.cells.len(),
                    self.taus.len()
                ),
            );
        }
        if self.rates {
            match self.kind.varied() {
                None => push("plan.rates", format!("{} plans have no rates", self.kind)),
                Some(v) => {
                    let hs: Vec<f64> = self.cells.iter().map(|&n| self.h(n)).collect();
                    match v {
                        Varied::Tau => {
                            if let Some(m) = halving_problem(&self.taus, "tau") {
                                push("grid.tau", m);
                            }
                        }
                        Varied::H => {
                            if let Some(m) = halving_problem(&hs, "mesh") {
                                push("grid.N", m);
                            }
                        }
                        Varied::Epsilon => {
                            if self.epsilons.len() < 2 || !geometric(&self.epsilons) {
                                push("grid.epsilon", "epsilon values must decrease by a constant factor when rates are requested".into());
                            }
                        }
                    }
                    if self.kind == PlanKind::DiagonalSweep {
                        if let Some(m) = halving_problem(&self.taus, "tau") {
                            push("grid.tau", m);
                        }
                        if !geometric(&self.epsilons) {
                            push("grid.epsilon", "epsilon values must decrease by a constant factor when rates are requested".into());
                        }
                    }
                }
            }
        }

        match self.truth {
            TruthSource::Exact if self.problem.exact(self.lambda).is_none() => push(
                "reference.truth",
                format!(
                    "no exact solution for {} with lambda = {}",
                    self.problem, self.lambda
                ),
            ),
            TruthSource::Reference => {
                if probe {
                    push("reference.truth", "stability probes have no reference".into());
                }
                if self.reference.h_factor == 0 {
                    push("reference.h_factor", "must be at least 1".into());
                }
                if self.reference.tau_factor == 0 {
                    push("reference.tau_factor", "must be at least 1".into());
                }
                if let Some(&n_max) = self.cells.iter().max() {
                    let n_ref = n_max * self.reference.h_factor.max(1);
                    if self.cells.iter().any(|&n| n == 0 || !n_ref.is_multiple_of(n)) {
                        push("grid.N", format!("every N must divide the reference N = {n_ref}"));
                    }
                }
                if !probe && self.t_final > 0.0 {
                    if let Some(t) = self.reference_tau() {
                        if let Err(e) = self.steps_for(t) {
                            push("reference.tau_factor", e.to_string());
                        }
                    }
                }
            }
            _ => {}
        }
        for &t in &self.output.snapshot_times {
            if !(t >= 0.0 && t <= self.t_final) {
                push("output.snapshot_times", format!("{t} lies outside [0, T]"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Plan(
                problems.into_iter().map(|(f, m)| format!("{f}: {m}")).collect(),
            ))
        }
    }

    pub fn reference_cells(&self) -> Option<usize> {
        self.cells.iter().max().map(|n| n * self.reference.h_factor)
    }

    pub fn reference_tau(&self) -> Option<f64> {
        self.taus
            .iter()
            .copied()
            .reduce(f64::min)
            .map(|t| t / self.reference.tau_factor as f64)
    }

    /// Semi-implicit step bound on an `n`-cell mesh for the probe's `σ`.
    pub fn probe_bound(&self, n: usize, epsilon: f64) -> Result<f64> {
        let g = self.grid(n)?;
        let sup = match self.probe.u_bound {
            Some(u) => u,
            None => norm_linf(&self.problem.initial_data(&g)?.phi, &g)?,
        };
        let p = NonlinearityParams::new(self.lambda, epsilon)?;
        match siefd_tau_bound(g.h(), sigma_from_sup(sup, &p))? {
            TauBound::AtMost(b) => Ok(b),
            TauBound::Unconditional => Err(Error::domain(format!(
                "the semi-implicit scheme is unconditionally stable at N = {n}; nothing to probe"
            ))),
        }
    }

    /// The grid points, in plan order.
    pub fn cell_list(&self) -> Result<Vec<Cell>> {
        let mut out = Vec::new();
        match self.kind {
            PlanKind::DiagonalSweep => {
                for ((&epsilon, &n), &tau) in self.epsilons.iter().zip(&self.cells).zip(&self.taus) {
                    out.push(Cell { epsilon, n, tau });
                }
            }
            PlanKind::StabilityProbe => {
                for &epsilon in &self.epsilons {
                    for &n in &self.cells {
                        let bound = self.probe_bound(n, epsilon)?;
                        for &f in &self.probe.tau_factors {
                            out.push(Cell {
                                epsilon,
                                n,
                                tau: f * bound,
                            });
                        }
                    }
                }
            }
            _ => {
                for &epsilon in &self.epsilons {
                    for &n in &self.cells {
                        for &tau in &self.taus {
                            out.push(Cell { epsilon, n, tau });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// The truth source used when a plan does not name one.
pub fn default_truth(kind: PlanKind, problem: &Problem, lambda: f64) -> TruthSource {
    match kind {
        PlanKind::TemporalSweep | PlanKind::SpatialSweep => TruthSource::Reference,
        PlanKind::StabilityProbe => TruthSource::None,
        _ if problem.exact(lambda).is_some() => TruthSource::Exact,
        _ => TruthSource::None,
    }
}

pub(crate) fn steps_to(t_final: f64, tau: f64) -> Result<usize> {
    let steps = (t_final / tau).round();
    if steps < 1.0 || ((steps * tau - t_final) / t_final).abs() > GRID_RATIO_TOL {
        return Err(Error::domain(format!(
            "T = {t_final} is not a whole number of steps of {tau}"
        )));
    }
    Ok(steps as usize)
}

fn halving_problem(values: &[f64], what: &str) -> Option<String> {
    if values.len() < 2 {
        Some(format!("rates need at least two {what} values"))
    } else if !halving(values) {
        Some(format!(
            "{what} values must halve from one to the next when rates are requested"
        ))
    } else {
        None
    }
}

fn halving(values: &[f64]) -> bool {
    values
        .windows(2)
        .all(|w| ((w[0] / w[1]) - 2.0).abs() <= GRID_RATIO_TOL * 2.0)
}

fn geometric(values: &[f64]) -> bool {
    if values.len() < 2 {
        return true;
    }
    let r = values[0] / values[1];
    r > 1.0
        && values
            .windows(2)
            .all(|w| ((w[0] / w[1]) - r).abs() <= GRID_RATIO_TOL * r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temporal() -> ExperimentPlan {
        let mut p = ExperimentPlan::new(PlanKind::TemporalSweep, Scheme::Cnfd, Problem::Example1Gausson);
        p.cells = vec![256];
        p.taus = vec![0.1, 0.05, 0.025];
        p
    }

    #[test]
    fn defaults_validate() {
        temporal().validate().unwrap();
        assert_eq!(temporal().truth, TruthSource::Reference);
        assert_eq!(temporal().domain, (-16.0, 16.0));
        let single = ExperimentPlan::new(PlanKind::SingleSolve, Scheme::Cnfd, Problem::Example2CosSin);
        assert_eq!(single.truth, TruthSource::None);
        assert!(!single.rates);
    }

    #[test]
    fn non_halving_tau_names_the_field() {
        let mut p = temporal();
        p.taus = vec![0.1, 0.04, 0.02];
        let problems = p.problems();
        assert_eq!(problems.len(), 1);
        assert_eq!(problems[0].0, "grid.tau");
        p.rates = false;
        p.validate().unwrap();
    }

    #[test]
    fn collects_every_problem() {
        let mut p = temporal();
        p.t_final = -1.0;
        p.epsilons = vec![0.0];
        p.cells = vec![2];
        p.newton_tol = 1.0;
        let fields: Vec<_> = p.problems().into_iter().map(|(f, _)| f).collect();
        for f in ["plan.T", "grid.epsilon", "grid.N", "solver.newton_tol"] {
            assert!(fields.contains(&f), "{f} missing from {fields:?}");
        }
        assert!(matches!(p.validate(), Err(Error::Plan(v)) if v.len() == fields.len()));
    }

    #[test]
    fn steps_must_divide_t() {
        assert_eq!(steps_to(1.0, 0.1).unwrap(), 10);
        assert_eq!(steps_to(1.0, 0.1 / 32.0).unwrap(), 320);
        assert!(steps_to(1.0, 0.3).is_err());
        let mut p = temporal();
        p.taus = vec![0.3];
        p.rates = false;
        assert_eq!(p.problems()[0].0, "grid.tau");
    }

    #[test]
    fn exact_truth_requires_closed_form() {
        let mut p = ExperimentPlan::new(PlanKind::SingleSolve, Scheme::Cnfd, Problem::Example2CosSin);
        p.cells = vec![64];
        p.taus = vec![0.01];
        p.truth = TruthSource::Exact;
        assert_eq!(p.problems()[0].0, "reference.truth");
    }

    #[test]
    fn cells_follow_kind() {
        let mut p = temporal();
        p.epsilons = vec![0.1, 0.05];
        assert_eq!(p.cell_list().unwrap().len(), 6);
        p.kind = PlanKind::DiagonalSweep;
        p.cells = vec![64, 128, 256];
        p.epsilons = vec![1e-3, 2.5e-4, 6.25e-5];
        p.validate().unwrap();
        let cells = p.cell_list().unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!((cells[2].n, cells[2].tau), (256, 0.025));
        p.cells.pop();
        assert!(p.problems().iter().any(|(f, _)| *f == "grid"));
    }

    #[test]
    fn probe_taus_scale_the_bound() {
        let mut p = ExperimentPlan::new(PlanKind::StabilityProbe, Scheme::Siefd, Problem::Example1Gausson);
        p.cells = vec![320];
        p.epsilons = vec![0.1];
        p.probe.u_bound = Some(1.0);
        p.validate().unwrap();
        let cells = p.cell_list().unwrap();
        assert!((cells[0].tau / 0.9 - 0.100709).abs() < 1e-6);
        assert!((cells[1].tau / 1.5 - 0.100709).abs() < 1e-6);
    }

    #[test]
    fn reference_resolution() {
        let p = temporal();
        assert_eq!(p.reference_cells(), Some(1024));
        assert!((p.reference_tau().unwrap() - 0.025 / 8.0).abs() < 1e-18);
    }
}
