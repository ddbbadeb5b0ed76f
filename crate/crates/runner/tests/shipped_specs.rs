//! The run specs under `specs/` parse, validate and point at reference rows.

use std::path::Path;

use nluqa_runner::reference::reference;
use nluqa_runner::{Protocol, RunSpec};

fn specs() -> Vec<(String, RunSpec)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs");
    let mut out: Vec<(String, RunSpec)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| {
            let spec = RunSpec::from_file(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p.file_stem().unwrap().to_string_lossy().into_owned(), spec)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn every_spec_parses_and_is_named_after_its_file() {
    let specs = specs();
    assert!(specs.len() > 50);
    for (file, spec) in &specs {
        assert_eq!(&spec.name, file);
    }
    for protocol in Protocol::ALL {
        assert!(specs.iter().any(|(_, s)| s.protocol == protocol), "no spec for {protocol}");
    }
}

#[test]
fn references_resolve() {
    let r = reference();
    for (file, spec) in specs() {
        let Some(sel) = &spec.reference else { continue };
        let folds = spec.folds.label();
        let found = match sel.table.as_str() {
            "clinc-transfer" => r.transfer_matrix(&sel.method).is_some(),
            "pilot" => r.pilot(&sel.method.parse().unwrap(), &spec.domains[0]).is_some(),
            table => r
                .score
                .iter()
                .any(|s| s.table == table && s.method == sel.method && s.folds == folds),
        };
        assert!(found, "{file}: no reference rows for {sel:?} at {folds} folds");
    }
}
