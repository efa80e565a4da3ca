//! Canned experiments: the shipped plans, run and checked against the
//! expected convergence behaviour.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::analysis::cache::ReferenceCache;
use crate::error::{Error, Result};

use super::config::plan_from_str;
use super::output::{csv_string, energy_csv_string, snapshot_csv_string, write};
use super::plan::ExperimentPlan;
use super::runner::{run, run_with_threads, SweepResult, SweepRow, DRIFT_TOL};

pub const TABLE1_PLAN: &str = include_str!("../../plans/table1.plan");
pub const TABLE2_PLAN: &str = include_str!("../../plans/table2.plan");
pub const TABLE3_DIAGONAL_PLAN: &str = include_str!("../../plans/table3-diagonal.plan");
pub const TABLE3_COLUMN_PLAN: &str = include_str!("../../plans/table3-column.plan");
pub const FIG1_PLAN: &str = include_str!("../../plans/fig1.plan");
pub const FIG_ENERGY_PLAN: &str = include_str!("../../plans/fig-energy.plan");
pub const FIG_ENERGY_SIEFD_PLAN: &str = include_str!("../../plans/fig-energy-siefd.plan");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Table1,
    Table2,
    Table3,
    Fig1,
    FigEnergy,
}

impl Target {
    pub const ALL: [Target; 5] = [
        Target::Table1,
        Target::Table2,
        Target::Table3,
        Target::Fig1,
        Target::FigEnergy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Table3 => "table3",
            Target::Fig1 => "fig1",
            Target::FigEnergy => "fig-energy",
        }
    }

    /// The plans behind the target, labelled. With `paper_scale` the meshes
    /// and references are the full published resolutions.
    pub fn plans(&self, paper_scale: bool) -> Result<Vec<(&'static str, ExperimentPlan)>> {
        let parse = |text: &str| plan_from_str(text, Path::new(""));
        let mut plans = match self {
            Target::Table1 => vec![("temporal", parse(TABLE1_PLAN)?)],
            Target::Table2 => vec![("spatial", parse(TABLE2_PLAN)?)],
            Target::Table3 => vec![
                ("diagonal", parse(TABLE3_DIAGONAL_PLAN)?),
                ("column", parse(TABLE3_COLUMN_PLAN)?),
            ],
            Target::Fig1 => vec![("model", parse(FIG1_PLAN)?)],
            Target::FigEnergy => vec![
                ("cnfd", parse(FIG_ENERGY_PLAN)?),
                ("siefd", parse(FIG_ENERGY_SIEFD_PLAN)?),
            ],
        };
        if paper_scale {
            for (_, p) in &mut plans {
                match self {
                    Target::Table1 => {
                        // h = 2^-10, tau_ref = 0.01 * 2^-9, and the third eps
                        p.cells = vec![32768];
                        p.taus = geometric(0.05, 0.5, 5);
                        p.epsilons = vec![0.05, 0.0125, 0.1 / 32768.0];
                        p.reference.tau_factor = 160;
                    }
                    Target::Table2 => {
                        // h = 0.5 * 2^-j for j = 1..5 against h = 2^-10
                        p.cells = vec![128, 256, 512, 1024, 2048];
                        p.taus = vec![0.01 / 512.0];
                        p.epsilons = vec![0.05, 0.0125, 0.1 / 32768.0];
                        p.reference.h_factor = 16;
                    }
                    Target::Fig1 => {
                        p.cells = vec![32768];
                        p.taus = vec![0.01 / 512.0];
                    }
                    Target::Table3 | Target::FigEnergy => {}
                }
                p.validate()?;
            }
        }
        Ok(plans)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown target '{s}' (expected table1, table2, table3, fig1 or fig-energy)"
                ))
            })
    }
}

/// One pass/fail judgement on a reproduced experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct Reproduction {
    pub target: Target,
    pub results: Vec<(&'static str, SweepResult)>,
    pub checks: Vec<Check>,
}

impl Reproduction {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.results.iter().flat_map(|(_, r)| r.rows.iter())
    }

    /// Writes the combined CSV to `csv`; energy-drift targets also write
    /// `<stem>-energy.csv` and `<stem>-snapshots.csv` beside it.
    pub fn write(&self, csv: &Path) -> Result<Vec<PathBuf>> {
        write(csv, &csv_string(self.rows()))?;
        let mut written = vec![csv.to_path_buf()];
        let trajectories: Vec<_> = self
            .results
            .iter()
            .flat_map(|(_, r)| r.trajectories.iter().cloned())
            .collect();
        if !trajectories.is_empty() {
            let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
            let energy = csv.with_file_name(format!("{stem}-energy.csv"));
            let snaps = csv.with_file_name(format!("{stem}-snapshots.csv"));
            write(&energy, &energy_csv_string(&trajectories))?;
            write(&snaps, &snapshot_csv_string(&trajectories))?;
            written.extend([energy, snaps]);
        }
        Ok(written)
    }
}

/// Runs a target's plans and judges the results.
pub fn reproduce(
    target: Target,
    paper_scale: bool,
    cache: &ReferenceCache,
    threads: Option<usize>,
) -> Result<Reproduction> {
    let mut results = Vec::new();
    for (label, plan) in target.plans(paper_scale)? {
        let r = match threads {
            Some(t) => run_with_threads(&plan, cache, t)?,
            None => run(&plan, cache)?,
        };
        results.push((label, r));
    }
    let checks = judge(target, &results);
    Ok(Reproduction {
        target,
        results,
        checks,
    })
}

const NORMS: [&str; 3] = ["l2", "linf", "h1"];

fn rate_check(name: &str, rows: &[SweepRow], lo: f64, hi: f64, norms: &[usize]) -> Check {
    let mut seen = 0;
    let mut worst: Option<(f64, String)> = None;
    let mut missing = 0;
    for r in rows {
        for &k in norms {
            match r.rates[k] {
                Some(v) => {
                    seen += 1;
                    if !(lo..=hi).contains(&v) {
                        let dist = if v < lo { lo - v } else { v - hi };
                        if worst.as_ref().is_none_or(|(d, _)| dist > *d) {
                            worst = Some((
                                dist,
                                format!("{} rate {v:.3} at eps={} h={} tau={}", NORMS[k], r.epsilon, r.h, r.tau),
                            ));
                        }
                    }
                }
                None => missing += 1,
            }
        }
    }
    let (min, max) = rows
        .iter()
        .flat_map(|r| norms.iter().filter_map(|&k| r.rates[k]))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let groups = rows.iter().filter(|r| r.rates.iter().all(Option::is_none)).count();
    let complete = missing == groups * norms.len() && seen > 0;
    Check {
        name: name.to_string(),
        passed: worst.is_none() && complete,
        detail: match worst {
            None if complete => format!("{seen} rates in [{min:.3}, {max:.3}], required [{lo}, {hi}]"),
            None => format!("{missing} rates missing"),
            Some((_, w)) => format!("{w} outside [{lo}, {hi}]; observed [{min:.3}, {max:.3}]"),
        },
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn judge(target: Target, results: &[(&'static str, SweepResult)]) -> Vec<Check> {
    let rows = |label: &str| -> Vec<SweepRow> {
        results
            .iter()
            .filter(|(l, _)| *l == label)
            .flat_map(|(_, r)| r.rows.clone())
            .collect()
    };
    let mut checks = Vec::new();
    let status_check = |label: &str, rows: &[SweepRow]| {
        let bad: Vec<String> = rows
            .iter()
            .filter(|r| r.status.name() != "ok")
            .map(|r| format!("eps={} h={} tau={}: {}", r.epsilon, r.h, r.tau, r.status))
            .collect();
        Check {
            name: format!("{label} solver status"),
            passed: bad.is_empty(),
            detail: if bad.is_empty() {
                format!("{} rows ok", rows.len())
            } else {
                bad.join("; ")
            },
        }
    };
    match target {
        Target::Table1 => {
            let r = rows("temporal");
            checks.push(status_check("temporal", &r));
            checks.push(rate_check("temporal rates", &r, 1.8, 2.2, &[0, 1, 2]));
        }
        Target::Table2 => {
            let r = rows("spatial");
            checks.push(status_check("spatial", &r));
            checks.push(rate_check("spatial rates", &r, 1.9, 2.1, &[0, 1, 2]));
        }
        Target::Table3 => {
            let d = rows("diagonal");
            checks.push(status_check("diagonal", &d));
            checks.push(rate_check("diagonal l2 rates", &d, 1.7, 2.2, &[0]));
            let mut c = rows("column");
            checks.push(status_check("column", &c));
            c.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
            let ratios: Vec<f64> = c.windows(2).map(|w| w[0].norms.l2 / w[1].norms.l2).collect();
            let ok = !ratios.is_empty() && ratios.iter().all(|q| (4.0 / 3.0..=12.0).contains(q));
            checks.push(Check {
                name: "column error ratios per 4x eps".into(),
                passed: ok,
                detail: format!(
                    "{} required in [{:.3}, 12]",
                    ratios.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>().join(", "),
                    4.0 / 3.0
                ),
            });
        }
        Target::Fig1 => {
            let r = rows("model");
            checks.push(status_check("model", &r));
            for (k, name) in NORMS.iter().enumerate() {
                let pts: Vec<(f64, f64)> = r
                    .iter()
                    .map(|row| (row.epsilon, [row.norms.l2, row.norms.linf, row.norms.h1][k]))
                    .collect();
                let slope = log_log_slope(&pts);
                checks.push(Check {
                    name: format!("{name} error slope in eps"),
                    passed: slope.is_some_and(|s| (0.85..=1.15).contains(&s)),
                    detail: match slope {
                        Some(s) => format!("{s:.4}, required [0.85, 1.15]"),
                        None => "not enough positive errors".into(),
                    },
                });
            }
        }
        Target::FigEnergy => {
            for (label, res) in results {
                for r in &res.rows {
                    checks.push(Check {
                        name: format!("{label} energy drift"),
                        passed: r.energy_drift <= DRIFT_TOL && r.status.name() == "ok",
                        detail: format!(
                            "{:.3e} over {} steps ({}), required <= {DRIFT_TOL:e}",
                            r.energy_drift, r.steps, r.status
                        ),
                    });
                }
            }
        }
    }
    checks
}

fn geometric(x0: f64, r: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| x0 * r.powi(j as i32)).collect()
}
