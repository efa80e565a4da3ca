//! CSV serialization of sweep results.
//!
//! Floats are written with 17 significant digits (`{:.16e}`); absent values
//! (orders of the first row in a group, norms of failed runs) are empty
//! fields. Wall time is deliberately not part of the schema so that repeated
//! runs produce identical files.

use std::fs;
use std::path::Path;

use crate::error::Result;

use super::runner::{sort_rows, SweepResult, SweepRow, Trajectory};

pub const CSV_HEADER: &str = "scheme,problem,epsilon,lambda,h,tau,T,norm_l2,norm_linf,norm_h1,rate_l2,rate_linf,rate_h1,energy_drift,newton_avg_iters,status";

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn row_line(r: &SweepRow) -> String {
    [
        r.scheme.to_string(),
        r.problem.clone(),
        num(r.epsilon),
        num(r.lambda),
        num(r.h),
        num(r.tau),
        num(r.t_final),
        num(r.norms.l2),
        num(r.norms.linf),
        num(r.norms.h1),
        opt(r.rates[0]),
        opt(r.rates[1]),
        opt(r.rates[2]),
        num(r.energy_drift),
        num(r.newton_avg_iters),
        r.status.to_string(),
    ]
    .join(",")
}

/// The CSV text for any number of rows, sorted canonically.
pub fn csv_string<'a>(rows: impl IntoIterator<Item = &'a SweepRow>) -> String {
    let mut rows: Vec<SweepRow> = rows.into_iter().cloned().collect();
    sort_rows(&mut rows);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &rows {
        out.push_str(&row_line(r));
        out.push('\n');
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    write(path, &csv_string(&result.rows))
}

/// `scheme,epsilon,N,tau,t,energy,drift` for every trajectory.
pub fn energy_csv_string(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("scheme,epsilon,N,tau,t,energy,drift\n");
    for tr in trajectories {
        let e0 = tr.energy.first().map(|e| e.1).unwrap_or(0.0);
        for &(t, e) in &tr.energy {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                tr.scheme,
                num(tr.epsilon),
                tr.n,
                num(tr.tau),
                num(t),
                num(e),
                num((e - e0) / (1.0 + e0.abs()))
            ));
        }
    }
    out
}

/// `scheme,epsilon,N,tau,t,x,u`, one line per node and snapshot.
pub fn snapshot_csv_string(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("scheme,epsilon,N,tau,t,x,u\n");
    for tr in trajectories {
        for (t, u) in &tr.snapshots {
            for (x, v) in tr.nodes.iter().zip(u.cells()) {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    tr.scheme,
                    num(tr.epsilon),
                    tr.n,
                    num(tr.tau),
                    num(*t),
                    num(*x),
                    num(*v)
                ));
            }
        }
    }
    out
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{ErrorReport, Truth};
    use crate::harness::plan::PlanKind;
    use crate::harness::runner::RowStatus;
    use crate::schemes::Scheme;
    use std::time::Duration;

    fn row(eps: f64, h: f64, tau: f64) -> SweepRow {
        SweepRow {
            scheme: Scheme::Cnfd,
            problem: "example1-gausson".into(),
            epsilon: eps,
            lambda: 1.0,
            n: 64,
            h,
            tau,
            t_final: 1.0,
            steps: 10,
            norms: ErrorReport {
                l2: 1.15e-3,
                linf: 7.9e-4,
                h1: 0.1 + 0.2,
                against: Truth::ReferenceReg,
            },
            rates: [Some(1.96), None, Some(2.0)],
            energy_drift: 1e-15,
            newton_avg_iters: 2.5,
            status: RowStatus::Ok,
            sigma_max: 1.0,
            growth: 1.0,
            wall_time: Duration::from_millis(3),
        }
    }

    fn result(rows: Vec<SweepRow>) -> SweepResult {
        SweepResult {
            kind: PlanKind::TemporalSweep,
            rows,
            trajectories: Vec::new(),
        }
    }

    #[test]
    fn empty_result_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out/empty.csv");
        emit_csv(&result(vec![]), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn one_row_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        let r = row(0.05, 0.125, 0.1);
        emit_csv(&result(vec![r.clone()]), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let f: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(f.len(), CSV_HEADER.split(',').count());
        assert_eq!(f[0], "cnfd");
        assert_eq!(f[2].parse::<f64>().unwrap(), 0.05);
        assert_eq!(f[9].parse::<f64>().unwrap(), r.norms.h1);
        assert_eq!(f[10].parse::<f64>().unwrap(), 1.96);
        assert_eq!(f[11], "");
        assert_eq!(f[15], "ok");
        assert_eq!(f[2], "5.0000000000000003e-2");
    }

    #[test]
    fn rows_sorted_by_epsilon_h_tau() {
        let rows = vec![row(0.05, 0.1, 0.2), row(0.0125, 0.1, 0.1), row(0.05, 0.1, 0.1), row(0.05, 0.05, 0.3)];
        let text = csv_string(&rows);
        let keys: Vec<(f64, f64, f64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<f64> = l.split(',').skip(2).take(4).map(|v| v.parse().unwrap()).collect();
                (f[0], f[2], f[3])
            })
            .collect();
        assert_eq!(
            keys,
            vec![(0.0125, 0.1, 0.1), (0.05, 0.05, 0.3), (0.05, 0.1, 0.1), (0.05, 0.1, 0.2)]
        );
    }

    #[test]
    fn failed_norms_are_blank() {
        let mut r = row(0.05, 0.1, 0.1);
        r.norms.l2 = f64::NAN;
        let line = csv_string(&[r]).lines().nth(1).unwrap().to_string();
        assert_eq!(line.split(',').nth(7).unwrap(), "");
    }
}
