//! micro-F1 against an independent per-(utterance, class) decision counter.

use nluqa_core::corpus::AnnotatedUtterance;
use nluqa_core::scoring::{micro_f1_id, micro_f1_ve, Prediction};
use proptest::prelude::*;

const INTENTS: [&str; 5] = ["a", "b", "c", "d", "e"];
const SLOTS: [&str; 3] = ["s0", "s1", "s2"];
const VALUES: [&str; 4] = ["x", "y", " x", "z z"];

#[derive(Debug, Clone)]
struct Case {
    gold_intents: Vec<u8>,
    pred_intents: Vec<u8>,
    gold_slots: Vec<[Option<usize>; 3]>,
    pred_slots: Vec<[Option<usize>; 3]>,
}

fn case() -> impl Strategy<Value = Case> {
    (0usize..7).prop_flat_map(|n| {
        let mask = || proptest::collection::vec(0u8..32, n);
        let slots = || proptest::collection::vec(proptest::array::uniform3(proptest::option::of(0..VALUES.len())), n);
        (mask(), mask(), slots(), slots()).prop_map(|(gold_intents, pred_intents, gold_slots, pred_slots)| Case {
            gold_intents,
            pred_intents,
            gold_slots,
            pred_slots,
        })
    })
}

fn build(case: &Case) -> (Vec<AnnotatedUtterance>, Vec<Prediction>) {
    let mut gold = Vec::new();
    let mut preds = Vec::new();
    for i in 0..case.gold_intents.len() {
        let id = format!("u{i}");
        let mut g = AnnotatedUtterance::new(&id, "text")
            .with_intents(INTENTS.iter().enumerate().filter(|(k, _)| case.gold_intents[i] >> k & 1 == 1).map(|(_, n)| *n));
        let mut p = Prediction::new(&id);
        for (k, name) in INTENTS.iter().enumerate() {
            if case.pred_intents[i] >> k & 1 == 1 {
                p.intents.insert(name.to_string());
            }
        }
        for (s, slot) in SLOTS.iter().enumerate() {
            if let Some(v) = case.gold_slots[i][s] {
                g = g.with_slot(*slot, VALUES[v]);
            }
            if let Some(v) = case.pred_slots[i][s] {
                p.slot_values.insert(slot.to_string(), VALUES[v].to_string());
            }
        }
        gold.push(g);
        preds.push(p);
    }
    (gold, preds)
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Enumerates every (utterance, intent) decision.
fn oracle_id(case: &Case) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..case.gold_intents.len() {
        for k in 0..INTENTS.len() {
            let g = case.gold_intents[i] >> k & 1 == 1;
            let p = case.pred_intents[i] >> k & 1 == 1;
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    (tp, fp, fn_)
}

/// Enumerates every (utterance, slot) decision; a wrong value costs fp and fn.
fn oracle_ve(case: &Case) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..case.gold_slots.len() {
        for s in 0..SLOTS.len() {
            let g = case.gold_slots[i][s].map(|v| VALUES[v].trim());
            let p = case.pred_slots[i][s].map(|v| VALUES[v].trim());
            match (p, g) {
                (Some(p), Some(g)) if p == g => tp += 1,
                (Some(_), Some(_)) => {
                    fp += 1;
                    fn_ += 1
                }
                (Some(_), None) => fp += 1,
                (None, Some(_)) => fn_ += 1,
                (None, None) => {}
            }
        }
    }
    (tp, fp, fn_)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn micro_f1_matches_decision_counter(case in case()) {
        let (gold, preds) = build(&case);
        let id = micro_f1_id(&preds, &gold).unwrap();
        let (tp, fp, fn_) = oracle_id(&case);
        prop_assert_eq!((id.tp, id.fp, id.fn_), (tp, fp, fn_));
        prop_assert_eq!(id.micro_f1, f1(tp, fp, fn_));

        let ve = micro_f1_ve(&preds, &gold).unwrap();
        let (tp, fp, fn_) = oracle_ve(&case);
        prop_assert_eq!((ve.tp, ve.fp, ve.fn_), (tp, fp, fn_));
        prop_assert_eq!(ve.micro_f1, f1(tp, fp, fn_));
    }

    #[test]
    fn perfect_and_complementary_predictions(masks in proptest::collection::vec(0u8..32, 1..6)) {
        let case = Case {
            gold_intents: masks.clone(),
            pred_intents: masks.clone(),
            gold_slots: vec![[None; 3]; masks.len()],
            pred_slots: vec![[None; 3]; masks.len()],
        };
        let (gold, preds) = build(&case);
        prop_assert_eq!(micro_f1_id(&preds, &gold).unwrap().micro_f1, 1.0);

        let complement = Case { pred_intents: masks.iter().map(|m| !m & 31).collect(), ..case };
        let (gold, preds) = build(&complement);
        let r = micro_f1_id(&preds, &gold).unwrap();
        prop_assert_eq!(r.tp, 0);
        prop_assert_eq!(r.micro_f1, 0.0);
    }
}
