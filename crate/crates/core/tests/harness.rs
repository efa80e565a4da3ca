use std::path::{Path, PathBuf};

use rlogkg::analysis::cache::ReferenceCache;
use rlogkg::harness::{
    csv_string, plan_from_config, run, run_with_threads, ExperimentPlan, PlanKind, Problem,
    SweepRow, TruthSource,
};
use rlogkg::{Error, Scheme};

fn plans_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("plans")
}

/// A small temporal sweep against a cached reference.
fn small_sweep() -> ExperimentPlan {
    let mut p = ExperimentPlan::new(PlanKind::TemporalSweep, Scheme::Cnfd, Problem::Example1Gausson);
    p.cells = vec![256];
    p.taus = vec![0.1, 0.05, 0.025];
    p.epsilons = vec![0.05, 0.0125];
    p.t_final = 0.5;
    p.reference.h_factor = 2;
    p.reference.tau_factor = 4;
    p
}

#[test]
fn same_plan_and_cache_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ReferenceCache::at(dir.path()).unwrap();
    let plan = small_sweep();
    let a = csv_string(&run(&plan, &cache).unwrap().rows);
    let b = csv_string(&run(&plan, &cache).unwrap().rows);
    assert_eq!(a, b);
    // a fresh cache object reads the same files back
    let cache2 = ReferenceCache::at(dir.path()).unwrap();
    let c = csv_string(&run(&plan, &cache2).unwrap().rows);
    assert_eq!(a, c);
}

#[test]
fn thread_count_does_not_change_rows() {
    let plan = small_sweep();
    let serial = run_with_threads(&plan, &ReferenceCache::in_memory(), 1).unwrap();
    for threads in [2, 4, 7] {
        let parallel = run_with_threads(&plan, &ReferenceCache::in_memory(), threads).unwrap();
        assert_eq!(csv_string(&serial.rows), csv_string(&parallel.rows), "{threads} threads");
    }
}

fn max_relative_change(a: &[SweepRow], b: &[SweepRow]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            [
                (x.norms.l2, y.norms.l2),
                (x.norms.linf, y.norms.linf),
                (x.norms.h1, y.norms.h1),
            ]
        })
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

#[test]
fn deleting_the_cache_regenerates_the_same_errors() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_sweep();
    let first = run(&plan, &ReferenceCache::at(dir.path()).unwrap()).unwrap();
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), plan.epsilons.len());
    std::fs::remove_dir_all(dir.path()).unwrap();
    let second = run(&plan, &ReferenceCache::at(dir.path()).unwrap()).unwrap();
    assert!(max_relative_change(&first.rows, &second.rows) < 1e-13);
}

#[test]
fn corrupt_cache_aborts_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_sweep();
    run(&plan, &ReferenceCache::at(dir.path()).unwrap()).unwrap();
    for f in std::fs::read_dir(dir.path()).unwrap() {
        let path = f.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    }
    let err = run(&plan, &ReferenceCache::at(dir.path()).unwrap()).unwrap_err();
    assert!(matches!(err, Error::CacheCorrupt { .. }), "{err}");
}

#[test]
fn shipped_table1_plan_is_the_desk_scale_temporal_sweep() {
    let plan = plan_from_config(&plans_dir().join("table1.plan")).unwrap();
    let mut want = ExperimentPlan::new(PlanKind::TemporalSweep, Scheme::Cnfd, Problem::Example1Gausson);
    want.domain = (-16.0, 16.0);
    want.t_final = 1.0;
    want.cells = vec![4096];
    want.taus = vec![0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125];
    want.epsilons = vec![0.1 / 2.0, 0.1 / 8.0];
    want.truth = TruthSource::Reference;
    want.reference.h_factor = 1;
    want.reference.tau_factor = 8;
    assert_eq!(plan, want);
    assert_eq!(plan.h(4096), 2f64.powi(-7));
    assert_eq!(plan.reference_tau(), Some(0.1 * 2f64.powi(-8)));
}

#[test]
fn every_shipped_plan_validates() {
    let mut count = 0;
    for entry in std::fs::read_dir(plans_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "plan") {
            plan_from_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 8);
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.plan");
    std::fs::write(
        &path,
        "[plan]\nkind = temporal-sweep\nproblem = example1-gausson\n\n[grid]\nN = 128\ntau = 0.1, 0.04, 0.02\n",
    )
    .unwrap();
    match plan_from_config(&path) {
        Err(Error::Plan(errs)) => {
            assert_eq!(errs.len(), 1, "{errs:?}");
            assert!(errs[0].starts_with("line 7: grid.tau"), "{errs:?}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        plan_from_config(&dir.path().join("missing.plan")),
        Err(Error::Io(_))
    ));
}

#[test]
fn sampled_initial_data_relative_to_plan_file() {
    let dir = tempfile::tempdir().unwrap();
    let g = rlogkg::Grid1D::new(-1.0, 1.0, 32).unwrap();
    let phi: Vec<String> = g.nodes().take(32).map(|x| format!("{}", (std::f64::consts::PI * x).cos())).collect();
    let gamma: Vec<String> = g.nodes().take(32).map(|x| format!("{}", (std::f64::consts::PI * x).sin())).collect();
    std::fs::write(dir.path().join("phi.txt"), phi.join("\n")).unwrap();
    std::fs::write(dir.path().join("gamma.txt"), gamma.join(" ")).unwrap();
    std::fs::write(
        dir.path().join("custom.plan"),
        "[plan]\nproblem = custom\ndomain = -1, 1\nT = 0.5\n[problem]\nphi_file = phi.txt\ngamma_file = gamma.txt\n[grid]\nN = 32\ntau = 0.05\n",
    )
    .unwrap();
    let custom = plan_from_config(&dir.path().join("custom.plan")).unwrap();
    let mut builtin = custom.clone();
    builtin.problem = Problem::Example2CosSin;
    let cache = ReferenceCache::in_memory();
    let a = run(&custom, &cache).unwrap().rows.remove(0);
    let b = run(&builtin, &cache).unwrap().rows.remove(0);
    assert!((a.norms.l2 - b.norms.l2).abs() < 1e-14 * b.norms.l2);
}
