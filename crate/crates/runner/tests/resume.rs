//! Re-running, forcing and resuming runs.

mod common;

use common::{dataset, dataset_with, spec};
use nluqa_runner::results::UnitOutcome;
use nluqa_runner::{run, Manifest, RunOptions, RunStatus};

const ORACLE: &str = "[backend]\nkind = \"gold-oracle\"\n";

fn unit_files(dir: &std::path::Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir.join("units"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read_to_string(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn completed_run_is_a_no_op_unless_forced() {
    let data = dataset();
    let spec = spec(&data, "again", "in-domain", &["banking"], ORACLE);
    let first = run(&spec, &RunOptions::default()).unwrap();
    assert!(!first.skipped);
    let before = unit_files(&first.run_dir);

    let second = run(&spec, &RunOptions::default()).unwrap();
    assert!(second.skipped);
    assert_eq!(second.results.reports, first.results.reports);
    assert_eq!(unit_files(&second.run_dir), before);

    // More workers do not change what the run computes.
    let mut wider = spec.clone();
    wider.workers = 3;
    assert!(run(&wider, &RunOptions::default()).unwrap().skipped);

    let forced = run(&spec, &RunOptions { force: true }).unwrap();
    assert!(!forced.skipped);
    assert!(forced.is_complete());
    assert_eq!(forced.results.reports, first.results.reports);
}

#[test]
fn partial_run_resumes_missing_units_only() {
    let data = dataset();
    let spec = spec(&data, "resume", "in-domain", &["banking"], ORACLE);
    let first = run(&spec, &RunOptions::default()).unwrap();
    let dir = first.run_dir.clone();

    // Pretend the run died after three units.
    let mut manifest = Manifest::load(&dir).unwrap().unwrap();
    let dropped: Vec<String> = manifest.completed_units.drain(3..).collect();
    manifest.status = RunStatus::Partial;
    manifest.save(&dir).unwrap();
    for unit in &dropped {
        std::fs::remove_file(dir.join("units").join(UnitOutcome::file_name(unit))).unwrap();
    }
    let kept: Vec<(String, String)> = unit_files(&dir);
    assert_eq!(kept.len(), 3);

    let resumed = run(&spec, &RunOptions::default()).unwrap();
    assert!(!resumed.skipped);
    assert!(resumed.is_complete());
    assert_eq!(resumed.results.reports, first.results.reports);
    let after = unit_files(&dir);
    assert_eq!(after.len(), 10);
    for unit in &kept {
        assert!(after.contains(unit), "{} was recomputed", unit.0);
    }
    let manifest = Manifest::load(&dir).unwrap().unwrap();
    assert_eq!(manifest.completed_units.len(), 10);
    assert_eq!(manifest.status, RunStatus::Complete);
}

#[test]
fn changed_spec_starts_over() {
    let data = dataset();
    let first = spec(&data, "changed", "in-domain", &["banking"], ORACLE);
    run(&first, &RunOptions::default()).unwrap();
    let mut second = first.clone();
    second.template = "none-none-none".parse().unwrap();
    let out = run(&second, &RunOptions::default()).unwrap();
    assert!(!out.skipped);
    let manifest = Manifest::load(&out.run_dir).unwrap().unwrap();
    assert_eq!(manifest.template_tag, "none-none-none");
    assert_eq!(manifest.completed_units.len(), 10);
}

#[test]
fn failing_unit_marks_the_run_partial_and_keeps_earlier_units() {
    // Fold 1 of the 10-fold setup trains on files 2 and 3, which are empty.
    let data = dataset_with(2, &[2, 3]);
    let spec = spec(
        &data,
        "fails",
        "in-domain",
        &["hotels"],
        "fold_ids = [0, 1, 2]\n[backend]\nkind = \"tiny-random\"\n[train]\nepochs = 1\nbatch_size = 32\n",
    );
    let out = run(&spec, &RunOptions::default()).unwrap();
    let err = out.error.as_ref().expect("fold 1 cannot train");
    assert!(err.to_string().contains("hotels/fold01/ID"), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert_eq!(out.results.status, RunStatus::Partial);
    let manifest = Manifest::load(&out.run_dir).unwrap().unwrap();
    assert_eq!(manifest.status, RunStatus::Partial);
    assert_eq!(manifest.completed_units, ["hotels/fold00/ID"]);
    assert!(manifest.error.is_some());
    assert_eq!(out.results.rows.len(), 1);
    assert_eq!(out.results.rows[0].folds_completed, 1);
    assert!(out.run_dir.join("results.json").is_file());
}
