//! Seeded fold construction and the sample-efficiency split.
//!
//! [`make_folds`] partitions a corpus into `k` label-stratified chunks. Fold
//! `i` trains on chunk `i` (the few-shot budget) and evaluates on the union of
//! the other chunks, the same shape as the published NLU++ splits.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedUtterance, FoldSplit};
use crate::{Error, Result};

pub const SAMPLE_EFFICIENCY_TEST_SIZE: usize = 1000;

pub fn make_folds(utterances: &[AnnotatedUtterance], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > utterances.len() {
        return Err(Error::invalid(format!(
            "{k} folds requested for {} utterances",
            utterances.len()
        )));
    }

    let mut strata: BTreeMap<Vec<&str>, Vec<usize>> = BTreeMap::new();
    for (index, utterance) in utterances.iter().enumerate() {
        let key: Vec<&str> = utterance.gold_intents.iter().map(String::as_str).collect();
        strata.entry(key).or_default().push(index);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; utterances.len()];
    let mut offset = 0;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for (position, &index) in members.iter().enumerate() {
            assignment[index] = (offset + position) % k;
        }
        offset = (offset + members.len()) % k;
    }

    Ok((0..k)
        .map(|fold_id| {
            let (train, test): (Vec<_>, Vec<_>) = utterances
                .iter()
                .zip(&assignment)
                .partition(|(_, &fold)| fold == fold_id);
            FoldSplit {
                fold_id,
                train_ids: train.into_iter().map(|(u, _)| u.id.clone()).collect(),
                test_ids: test.into_iter().map(|(u, _)| u.id.clone()).collect(),
            }
        })
        .collect())
}

/// Draws the fixed 1000-example test set first, then `n_train` training
/// examples from the remainder.
pub fn sample_efficiency_split(
    utterances: &[AnnotatedUtterance],
    n_train: usize,
    seed: u64,
) -> Result<(Vec<AnnotatedUtterance>, Vec<AnnotatedUtterance>)> {
    sample_efficiency_split_with(utterances, SAMPLE_EFFICIENCY_TEST_SIZE, n_train, seed)
}

/// [`sample_efficiency_split`] with a configurable test-set size.
///
/// The test set depends only on `(utterances, test_size, seed)`, never on
/// `n_train`.
pub fn sample_efficiency_split_with(
    utterances: &[AnnotatedUtterance],
    test_size: usize,
    n_train: usize,
    seed: u64,
) -> Result<(Vec<AnnotatedUtterance>, Vec<AnnotatedUtterance>)> {
    if n_train == 0 {
        return Err(Error::invalid("n_train must be positive"));
    }
    if utterances.len() < test_size + n_train {
        return Err(Error::invalid(format!(
            "need {} utterances for a {test_size}-example test set and {n_train} training \
             examples, have {}",
            test_size + n_train,
            utterances.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.shuffle(&mut rng);
    let (test_idx, remainder) = order.split_at(test_size);
    let test = test_idx.iter().map(|&i| utterances[i].clone()).collect();
    let train = remainder
        .choose_multiple(&mut rng, n_train)
        .map(|&i| utterances[i].clone())
        .collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashSet};

    fn labelled(n_intents: usize, per_intent: usize) -> Vec<AnnotatedUtterance> {
        (0..n_intents)
            .flat_map(|i| {
                (0..per_intent).map(move |j| {
                    AnnotatedUtterance::new(format!("u{i}-{j}"), format!("text {i} {j}"))
                        .with_intents([format!("intent{i}")])
                })
            })
            .collect()
    }

    #[test]
    fn clinc_shaped_folds_have_ten_per_intent() {
        // one CLINC domain's training partition: 15 intents x 100 utterances
        let utterances = labelled(15, 100);
        let folds = make_folds(&utterances, 10, 42).unwrap();
        assert_eq!(folds.len(), 10);
        let intent_of: BTreeMap<&str, &str> = utterances
            .iter()
            .map(|u| (u.id.as_str(), u.gold_intents.iter().next().unwrap().as_str()))
            .collect();
        for fold in &folds {
            assert_eq!(fold.train_ids.len(), 150);
            assert_eq!(fold.test_ids.len(), 1350);
            let mut per_intent: BTreeMap<&str, usize> = BTreeMap::new();
            for id in &fold.train_ids {
                *per_intent.entry(intent_of[id.as_str()]).or_default() += 1;
            }
            assert!(per_intent.values().all(|&n| n == 10));
        }
    }

    #[test]
    fn minimal_two_fold_split() {
        let utterances = labelled(1, 4);
        let folds = make_folds(&utterances, 2, 0).unwrap();
        for fold in &folds {
            assert_eq!(fold.train_ids.len(), 2);
            assert_eq!(fold.test_ids.len(), 2);
            let train: HashSet<_> = fold.train_ids.iter().collect();
            assert!(fold.test_ids.iter().all(|id| !train.contains(id)));
        }
        assert_ne!(folds[0].train_ids, folds[1].train_ids);
    }

    #[test]
    fn argument_errors() {
        let utterances = labelled(1, 3);
        assert!(make_folds(&utterances, 4, 0).is_err());
        assert!(make_folds(&utterances, 1, 0).is_err());
        assert!(sample_efficiency_split_with(&utterances, 2, 2, 0).is_err());
        assert!(sample_efficiency_split_with(&utterances, 2, 0, 0).is_err());
        assert!(sample_efficiency_split(&labelled(2, 500), 1, 0).is_err());
    }

    #[test]
    fn sample_efficiency_test_set_is_shared_across_sizes() {
        let utterances = labelled(10, 120);
        let (train32, test32) = sample_efficiency_split(&utterances, 32, 7).unwrap();
        let (train64, test64) = sample_efficiency_split(&utterances, 64, 7).unwrap();
        assert_eq!(test32.len(), 1000);
        assert_eq!(test32, test64);
        assert_eq!(train32.len(), 32);
        assert_eq!(train64.len(), 64);
        let test_ids: HashSet<_> = test32.iter().map(|u| &u.id).collect();
        assert!(train64.iter().all(|u| !test_ids.contains(&u.id)));

        let (train_all, _) = sample_efficiency_split(&utterances, 200, 7).unwrap();
        let mut got: Vec<_> = train_all.iter().map(|u| u.id.clone()).collect();
        got.sort();
        let mut expected: Vec<_> = utterances
            .iter()
            .map(|u| u.id.clone())
            .filter(|id| !test_ids.contains(id))
            .collect();
        expected.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn seeds_give_distinct_splits() {
        let utterances = labelled(10, 120);
        let tests: Vec<Vec<String>> = (0..3)
            .map(|seed| {
                let (_, test) = sample_efficiency_split(&utterances, 32, seed).unwrap();
                test.into_iter().map(|u| u.id).collect()
            })
            .collect();
        assert_ne!(tests[0], tests[1]);
        assert_ne!(tests[1], tests[2]);
        assert_ne!(tests[0], tests[2]);
    }
}
