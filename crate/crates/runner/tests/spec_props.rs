//! Run-spec invariants over generated specs.

use proptest::prelude::*;

use nluqa_core::instruction::InstructionTemplate;
use nluqa_runner::spec::{FoldSpec, TaskSelection};
use nluqa_runner::{Protocol, RunSpec};

fn base() -> RunSpec {
    RunSpec::from_toml(
        "name = \"p\"\nprotocol = \"in-domain\"\ndomains = [\"banking\"]\n\
         [dataset]\nkind = \"nluplusplus\"\n[backend]\nkind = \"gold-oracle\"\n",
    )
    .unwrap()
}

fn fold_spec() -> impl Strategy<Value = FoldSpec> {
    prop_oneof![
        Just("10".parse().unwrap()),
        Just("20".parse().unwrap()),
        (2usize..30, 0u64..1000).prop_map(|(k, seed)| FoldSpec::Custom { k, seed }),
    ]
}

fn valid_spec() -> impl Strategy<Value = RunSpec> {
    (
        fold_spec(),
        0usize..48,
        prop_oneof![Just(TaskSelection::Id), Just(TaskSelection::Ve), Just(TaskSelection::Both)],
        1usize..16,
        0u64..100,
        proptest::option::of(prop_oneof![Just(8usize), Just(16), Just(32)]),
        proptest::bool::ANY,
    )
        .prop_map(|(folds, template, task, workers, seed, adapters, two)| {
            let mut spec = base();
            spec.folds = folds;
            spec.template = InstructionTemplate::all()[template];
            spec.task = task;
            spec.workers = workers;
            spec.train.seed = seed;
            spec.train.adapter = adapters.map(|reduction_factor| nluqa_models::AdapterConfig { reduction_factor });
            if two {
                spec.domains.push("hotels".into());
            }
            spec
        })
}

proptest! {
    #[test]
    fn toml_round_trip_preserves_spec_and_hash(spec in valid_spec()) {
        spec.validate().unwrap();
        let back = RunSpec::from_toml(&spec.to_toml().unwrap()).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.content_hash(), spec.content_hash());
    }

    #[test]
    fn hash_ignores_workers_and_output_dir(spec in valid_spec(), workers in 1usize..64, dir in "[a-z]{1,8}") {
        let mut other = spec.clone();
        other.workers = workers;
        other.output_dir = Some(dir.into());
        prop_assert_eq!(other.content_hash(), spec.content_hash());
    }

    #[test]
    fn hash_tracks_result_relevant_fields(spec in valid_spec(), seed in 100u64..200) {
        let mut other = spec.clone();
        other.train.seed = seed;
        prop_assert_ne!(other.content_hash(), spec.content_hash());
    }

    #[test]
    fn protocol_names_round_trip(i in 0usize..8) {
        let p = Protocol::ALL[i];
        prop_assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
    }

    #[test]
    fn bad_names_are_rejected(name in "[a-z]{0,4}[ /:*?][a-z]{0,4}") {
        let mut spec = base();
        spec.name = name;
        prop_assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_workers_and_duplicate_domains_are_rejected(spec in valid_spec()) {
        let mut zero = spec.clone();
        zero.workers = 0;
        prop_assert!(zero.validate().is_err());
        let mut dup = spec.clone();
        dup.domains = vec!["banking".into(), "banking".into()];
        prop_assert!(dup.validate().is_err());
    }

    #[test]
    fn out_of_range_fold_ids_are_rejected(spec in valid_spec(), extra in 0usize..5) {
        let mut bad = spec.clone();
        bad.fold_ids = Some(vec![spec.folds.count() + extra]);
        prop_assert!(bad.validate().is_err());
    }
}
