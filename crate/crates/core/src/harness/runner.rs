use std::fmt;
use std::time::{Duration, Instant};

use log::{debug, warn};
use rayon::prelude::*;

use crate::analysis::cache::{Reference, ReferenceCache, ReferenceKey};
use crate::analysis::stability::sigma_from_sup;
use crate::analysis::{error_report, gausson, observed_order, ErrorReport, Truth};
use crate::error::{Error, Result};
use crate::grid::{norm_linf, GridFunction};
use crate::nonlinearity::NonlinearityParams;
use crate::schemes::{Scheme, Stepper, StepperConfig, WaveState};

use super::plan::{steps_to, Cell, ExperimentPlan, PlanKind, TruthSource, Varied};

/// Relative energy drift allowed before a row is flagged.
pub const DRIFT_TOL: f64 = 1e-8;

/// A probe stops early once `‖u‖_∞` has grown by this factor.
const PROBE_STOP_GROWTH: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowStatus {
    Ok,
    /// Newton failed somewhere and the damped fixed point took over.
    Fallback,
    /// Energy drift above [`DRIFT_TOL`] without a solver fallback.
    Drift,
    NonConvergence,
    /// Growth beyond the probe's limit.
    Blowup,
}

impl RowStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Fallback => "fallback",
            RowStatus::Drift => "drift",
            RowStatus::NonConvergence => "nonconvergence",
            RowStatus::Blowup => "blowup",
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub problem: String,
    pub epsilon: f64,
    pub lambda: f64,
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub t_final: f64,
    pub steps: usize,
    /// Errors against the plan's truth, or the solution's own norms.
    pub norms: ErrorReport,
    /// Observed orders `[l², l^∞, H¹]` against the previous row of the group.
    pub rates: [Option<f64>; 3],
    /// `max_n |E^n - E^0| / (1 + |E^0|)`.
    pub energy_drift: f64,
    pub newton_avg_iters: f64,
    pub status: RowStatus,
    /// Running maximum of `σ_max` over the layers computed.
    pub sigma_max: f64,
    /// `max_n ‖uⁿ‖_∞ / ‖u⁰‖_∞`.
    pub growth: f64,
    pub wall_time: Duration,
}

/// Energy history and waveform snapshots of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub epsilon: f64,
    pub n: usize,
    pub tau: f64,
    pub nodes: Vec<f64>,
    /// `(t_n, E^n)`, with `E^n` pairing layers `n` and `n + 1`.
    pub energy: Vec<(f64, f64)>,
    pub snapshots: Vec<(f64, GridFunction)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub kind: PlanKind,
    pub rows: Vec<SweepRow>,
    pub trajectories: Vec<Trajectory>,
}

/// Runs a plan on the current rayon pool.
pub fn run(plan: &ExperimentPlan, cache: &ReferenceCache) -> Result<SweepResult> {
    plan.validate()?;
    let cells = plan.cell_list()?;

    let references: Vec<(f64, std::sync::Arc<Reference>)> = if plan.truth == TruthSource::Reference {
        let mut eps: Vec<f64> = plan.epsilons.clone();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        eps.par_iter()
            .map(|&e| Ok((e, reference_for(plan, e, cache)?)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let outcomes: Vec<(SweepRow, Option<Trajectory>)> = cells
        .par_iter()
        .map(|cell| {
            let reference = references
                .iter()
                .find(|(e, _)| *e == cell.epsilon)
                .map(|(_, r)| r.as_ref());
            run_cell(plan, cell, reference)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut trajectories = Vec::new();
    for (row, traj) in outcomes {
        rows.push(row);
        trajectories.extend(traj);
    }
    if plan.rates {
        if let Some(v) = plan.kind.varied() {
            attach_rates(&mut rows, v, plan.kind);
        }
    }
    sort_rows(&mut rows);
    trajectories.sort_by(|a, b| {
        a.epsilon
            .total_cmp(&b.epsilon)
            .then(a.n.cmp(&b.n))
            .then(a.tau.total_cmp(&b.tau))
    });
    Ok(SweepResult {
        kind: plan.kind,
        rows,
        trajectories,
    })
}

/// Runs a plan on a private pool of `threads` workers.
pub fn run_with_threads(
    plan: &ExperimentPlan,
    cache: &ReferenceCache,
    threads: usize,
) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a pool of {threads} threads: {e}")))?;
    pool.install(|| run(plan, cache))
}

/// Canonical row order: by `ε`, then `h`, then `τ`, then scheme.
pub fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.epsilon
            .total_cmp(&b.epsilon)
            .then(a.h.total_cmp(&b.h))
            .then(a.tau.total_cmp(&b.tau))
            .then(a.scheme.cmp(&b.scheme))
    });
}

pub fn reference_key(plan: &ExperimentPlan, epsilon: f64) -> Result<ReferenceKey> {
    let cells = plan
        .reference_cells()
        .ok_or_else(|| Error::Config("reference needs at least one mesh".into()))?;
    let tau = plan
        .reference_tau()
        .ok_or_else(|| Error::Config("reference needs at least one time step".into()))?;
    Ok(ReferenceKey {
        scheme: Scheme::Cnfd,
        problem: plan.problem.cache_id()?,
        epsilon,
        lambda: plan.lambda,
        a: plan.domain.0,
        b: plan.domain.1,
        cells,
        tau,
        steps: steps_to(plan.t_final, tau)?,
        newton_tol: plan.newton_tol,
    })
}

fn reference_for(
    plan: &ExperimentPlan,
    epsilon: f64,
    cache: &ReferenceCache,
) -> Result<std::sync::Arc<Reference>> {
    let key = reference_key(plan, epsilon)?;
    cache.get_or_compute(&key, || {
        let g = crate::grid::Grid1D::new(key.a, key.b, key.cells)?;
        let init = plan.problem.initial_data(&g)?;
        let p = NonlinearityParams::new(key.lambda, epsilon)?;
        let cfg = StepperConfig::new(Scheme::Cnfd, key.tau)?
            .with_newton(key.newton_tol, plan.newton_max_iter)?
            .with_fallback(plan.fallback);
        let mut s = Stepper::new(g, p, cfg)?;
        let end = s.run(&init, key.steps, |_, _| {})?;
        Ok(Reference {
            prev: end.prev,
            curr: end.curr,
        })
    })
}

struct Tracker {
    e0: f64,
    drift: f64,
    iters: usize,
    solves: usize,
    fallback: bool,
    sup0: f64,
    sup_max: f64,
}

impl Tracker {
    fn observe(&mut self, s: &Stepper, st: &WaveState) {
        let e = s.energy(st);
        self.drift = self.drift.max((e - self.e0).abs() / (1.0 + self.e0.abs()));
        if !e.is_finite() {
            self.drift = f64::INFINITY;
        }
        let sup = st.curr.cells().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.sup_max = if sup.is_finite() { self.sup_max.max(sup) } else { f64::INFINITY };
        let stats = s.last_stats();
        self.iters += stats.iterations;
        self.solves += 1;
        self.fallback |= stats.used_fallback;
    }

    fn growth(&self) -> f64 {
        if self.sup0 > 0.0 {
            self.sup_max / self.sup0
        } else if self.sup_max > 0.0 {
            f64::INFINITY
        } else {
            1.0
        }
    }
}

fn run_cell(
    plan: &ExperimentPlan,
    cell: &Cell,
    reference: Option<&Reference>,
) -> Result<(SweepRow, Option<Trajectory>)> {
    let started = Instant::now();
    let g = plan.grid(cell.n)?;
    let init = plan.problem.initial_data(&g)?;
    let p = NonlinearityParams::new(plan.lambda, cell.epsilon)?;
    let cfg = StepperConfig::new(plan.scheme, cell.tau)?
        .with_newton(plan.newton_tol, plan.newton_max_iter)?
        .with_fallback(plan.fallback);
    let probe = plan.kind == PlanKind::StabilityProbe;
    let steps = if probe {
        plan.probe.steps
    } else {
        plan.steps_for(cell.tau)?
    };
    let mut s = Stepper::new(g, p, cfg)?;

    let mut state = s.first_step(&init)?;
    let sup0 = norm_linf(&init.phi, &g)?;
    let mut tr = Tracker {
        e0: s.energy(&state),
        drift: 0.0,
        iters: 0,
        solves: 0,
        fallback: false,
        sup0,
        sup_max: sup0.max(norm_linf(&state.curr, &g)?),
    };
    let keep_trajectory = plan.kind == PlanKind::EnergyDrift;
    let mut energy = Vec::new();
    let mut snapshots = Vec::new();
    let snapshot_steps: Vec<(f64, usize)> = plan
        .output
        .snapshot_times
        .iter()
        .map(|&t| (t, (t / cell.tau).round() as usize))
        .collect();
    if keep_trajectory {
        energy.push((0.0, tr.e0));
        for &(t, k) in &snapshot_steps {
            match k {
                0 => snapshots.push((t, state.prev.clone())),
                1 => snapshots.push((t, state.curr.clone())),
                _ => {}
            }
        }
    }

    let mut failure = None;
    for _ in 1..steps {
        match s.step(&state) {
            Ok(next) => state = next,
            Err(e @ Error::NonConvergence { .. }) | Err(e @ Error::Singular(_)) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        tr.observe(&s, &state);
        if keep_trajectory {
            // the pair's energy is labelled by its older layer
            energy.push(((state.n - 1) as f64 * cell.tau, s.energy(&state)));
            for &(t, k) in &snapshot_steps {
                if k == state.n {
                    snapshots.push((t, state.curr.clone()));
                }
            }
        }
        if probe && !(tr.growth() <= PROBE_STOP_GROWTH) {
            break;
        }
    }

    let growth = tr.growth();
    let status = if probe && !(growth <= plan.probe.growth_limit) {
        RowStatus::Blowup
    } else if failure.is_some() {
        RowStatus::NonConvergence
    } else if tr.fallback {
        RowStatus::Fallback
    } else if !(tr.drift <= DRIFT_TOL) {
        RowStatus::Drift
    } else {
        RowStatus::Ok
    };
    if let Some(e) = &failure {
        warn!(
            "{} eps={} N={} tau={}: {e}",
            plan.scheme, cell.epsilon, cell.n, cell.tau
        );
    }

    let norms = if failure.is_some() || probe {
        let zero = GridFunction::zeros(cell.n);
        let mut r = error_report(&zero, &state.curr, &g, Truth::Zero)?;
        if failure.is_some() {
            r.l2 = f64::NAN;
            r.linf = f64::NAN;
            r.h1 = f64::NAN;
        }
        r
    } else {
        match plan.truth {
            TruthSource::Exact => {
                let gp = plan
                    .problem
                    .exact(plan.lambda)
                    .ok_or_else(|| Error::Config("no exact solution for this problem".into()))?;
                let t = steps as f64 * cell.tau;
                let exact = g.sample(|x| gausson(x, t, &gp));
                error_report(&state.curr, &exact, &g, Truth::ExactLog)?
            }
            TruthSource::Reference => {
                let r = reference.ok_or_else(|| Error::Config("missing reference".into()))?;
                let stride = r.curr.cell_count() / cell.n;
                let truth = r.curr.restrict(stride)?;
                error_report(&state.curr, &truth, &g, Truth::ReferenceReg)?
            }
            TruthSource::None => {
                error_report(&state.curr, &GridFunction::zeros(cell.n), &g, Truth::Zero)?
            }
        }
    };

    let sigma = sigma_from_sup(tr.sup_max, &p);
    let row = SweepRow {
        scheme: plan.scheme,
        problem: plan.problem.name().to_string(),
        epsilon: cell.epsilon,
        lambda: plan.lambda,
        n: cell.n,
        h: g.h(),
        tau: cell.tau,
        t_final: if probe { steps as f64 * cell.tau } else { plan.t_final },
        steps,
        norms,
        rates: [None; 3],
        energy_drift: tr.drift,
        newton_avg_iters: if tr.solves > 0 {
            tr.iters as f64 / tr.solves as f64
        } else {
            0.0
        },
        status,
        sigma_max: sigma,
        growth,
        wall_time: started.elapsed(),
    };
    debug!(
        "{} eps={} N={} tau={} -> l2 {:e} ({})",
        row.scheme, row.epsilon, row.n, row.tau, row.norms.l2, row.status
    );
    let traj = keep_trajectory.then(|| Trajectory {
        scheme: plan.scheme,
        epsilon: cell.epsilon,
        n: cell.n,
        tau: cell.tau,
        nodes: (0..cell.n).map(|j| g.node(j)).collect(),
        energy,
        snapshots,
    });
    Ok((row, traj))
}

fn attach_rates(rows: &mut [SweepRow], varied: Varied, kind: PlanKind) {
    let key = |r: &SweepRow| -> f64 {
        match varied {
            Varied::Tau => r.tau,
            Varied::H => r.h,
            Varied::Epsilon => r.epsilon,
        }
    };
    let same_group = |a: &SweepRow, b: &SweepRow| -> bool {
        kind == PlanKind::DiagonalSweep
            || match varied {
                Varied::Tau => a.epsilon == b.epsilon && a.n == b.n,
                Varied::H => a.epsilon == b.epsilon && a.tau == b.tau,
                Varied::Epsilon => a.n == b.n && a.tau == b.tau,
            }
    };
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| key(&rows[j]).total_cmp(&key(&rows[i])));
    for (pos, &i) in order.iter().enumerate() {
        let Some(&prev) = order[..pos]
            .iter()
            .rev()
            .find(|&&j| same_group(&rows[j], &rows[i]))
        else {
            continue;
        };
        let (a, b) = (&rows[prev], &rows[i]);
        if key(a) == key(b) {
            continue;
        }
        let pairs = [
            (a.norms.l2, b.norms.l2),
            (a.norms.linf, b.norms.linf),
            (a.norms.h1, b.norms.h1),
        ];
        let mut rates = [None; 3];
        for (slot, (ea, eb)) in rates.iter_mut().zip(pairs) {
            if ea > 0.0 && eb > 0.0 && ea.is_finite() && eb.is_finite() {
                *slot = observed_order(&[(key(a), ea), (key(b), eb)])
                    .ok()
                    .map(|v| v[0]);
            }
        }
        rows[i].rates = rates;
    }
}

impl SweepResult {
    /// Rows in the canonical order, or an empty slice.
    pub fn rows(&self) -> &[SweepRow] {
        &self.rows
    }

    /// `true` when any cell failed to converge.
    pub fn any_failure(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.status == RowStatus::NonConvergence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::problem::Problem;
    use crate::schemes::Fallback;

    fn zero_plan() -> ExperimentPlan {
        let mut p = ExperimentPlan::new(
            PlanKind::SingleSolve,
            Scheme::Cnfd,
            Problem::Custom(crate::harness::problem::CustomProblem::Expressions {
                phi: "0.0".into(),
                gamma: "0.0".into(),
            }),
        );
        p.domain = (0.0, 1.0);
        p.cells = vec![16];
        p.taus = vec![0.1];
        p
    }

    #[test]
    fn zero_data_gives_zero_row() {
        let r = run(&zero_plan(), &ReferenceCache::in_memory()).unwrap();
        assert_eq!(r.rows.len(), 1);
        let row = &r.rows[0];
        assert_eq!((row.norms.l2, row.norms.linf, row.norms.h1), (0.0, 0.0, 0.0));
        assert_eq!(row.energy_drift, 0.0);
        assert_eq!(row.status, RowStatus::Ok);
        assert_eq!(row.norms.against, Truth::Zero);
        assert_eq!(row.steps, 10);
    }

    #[test]
    fn temporal_rates_near_two() {
        let mut p = ExperimentPlan::new(PlanKind::TemporalSweep, Scheme::Cnfd, Problem::Example2CosSin);
        p.cells = vec![64];
        p.taus = vec![0.04, 0.02, 0.01];
        p.t_final = 0.4;
        p.reference.h_factor = 1;
        let r = run(&p, &ReferenceCache::in_memory()).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert!(r.rows[0].tau < r.rows[2].tau);
        assert!(r.rows[2].rates.iter().all(|x| x.is_none()));
        for row in &r.rows[..2] {
            for rate in row.rates {
                let rate = rate.unwrap();
                assert!((1.8..=2.2).contains(&rate), "{rate}");
            }
        }
    }

    #[test]
    fn solver_failure_is_recorded() {
        let mut p = ExperimentPlan::new(PlanKind::SingleSolve, Scheme::Cnfd, Problem::Example2CosSin);
        p.cells = vec![16];
        p.taus = vec![0.01];
        p.t_final = 0.05;
        p.newton_max_iter = 1;
        p.fallback = Fallback::Fail;
        let r = run(&p, &ReferenceCache::in_memory()).unwrap();
        assert_eq!(r.rows[0].status, RowStatus::NonConvergence);
        assert!(r.rows[0].norms.l2.is_nan());
        assert!(r.any_failure());
    }

    #[test]
    fn energy_drift_keeps_trajectory() {
        let mut p = ExperimentPlan::new(PlanKind::EnergyDrift, Scheme::Siefd, Problem::Example2CosSin);
        p.cells = vec![64];
        p.taus = vec![0.01];
        p.output.snapshot_times = vec![0.0, 0.5, 1.0];
        let r = run(&p, &ReferenceCache::in_memory()).unwrap();
        let t = &r.trajectories[0];
        assert_eq!(t.energy.len(), 100);
        assert_eq!(t.snapshots.len(), 3);
        assert_eq!(t.snapshots[0].1.cells(), p.problem.initial_data(&p.grid(64).unwrap()).unwrap().phi.cells());
        assert!(r.rows[0].energy_drift < 1e-10);
    }
}
