//! Synthetic NLU++-style dataset written to a temporary directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use nluqa_runner::spec::RunSpec;

pub struct Dataset {
    pub dir: tempfile::TempDir,
}

impl Dataset {
    pub fn root(&self) -> PathBuf {
        self.dir.path().join("nluplusplus")
    }

    pub fn runs(&self) -> PathBuf {
        self.dir.path().join("runs")
    }
}

struct Phrase {
    intent: &'static str,
    text: &'static str,
}

const BANKING: &[Phrase] = &[
    Phrase { intent: "transfer", text: "send some money" },
    Phrase { intent: "balance", text: "check my balance" },
    Phrase { intent: "card", text: "block my card" },
];

const HOTELS: &[Phrase] = &[
    Phrase { intent: "booking", text: "reserve a room" },
    Phrase { intent: "change", text: "move my reservation" },
    Phrase { intent: "cancel", text: "cancel the stay" },
];

const DAYS: &[&str] = &["monday", "tuesday", "friday", "next week", "the 3rd of may"];

fn ontology() -> Value {
    json!({
        "intents": {
            "general": {
                "greet": "intend to say hello"
            },
            "banking": {
                "transfer": "intend to transfer money",
                "balance": "intend to know the account balance",
                "card": "intend to do something with a card"
            },
            "hotels": {
                "booking": "intend to talk about some booking",
                "change": "intend to change something",
                "cancel": "intend to cancel something"
            }
        },
        "slots": {
            "general": {
                "date": "date",
                "people": "number of people"
            },
            "banking": {
                "amount": "amount of money"
            },
            "hotels": {
                "rooms": "number of rooms"
            }
        }
    })
}

fn utterance(rng: &mut ChaCha8Rng, domain: &str) -> Value {
    let phrases = if domain == "banking" { BANKING } else { HOTELS };
    let mut text = String::new();
    let mut intents = Vec::new();
    if rng.random_bool(0.3) {
        text.push_str("hello, ");
        intents.push("greet");
    }
    text.push_str("i want to ");
    let first = phrases.choose(rng).unwrap();
    text.push_str(first.text);
    intents.push(first.intent);
    if rng.random_bool(0.3) {
        let second = phrases.choose(rng).unwrap();
        if second.intent != first.intent {
            text.push_str(" and ");
            text.push_str(second.text);
            intents.push(second.intent);
        }
    }
    let mut slots = Map::new();
    let mut add = |text: &mut String, prefix: &str, slot: &str, value: String| {
        text.push_str(prefix);
        let start = text.len();
        text.push_str(&value);
        slots.insert(slot.into(), json!({"text": value, "span": [start, text.len()]}));
    };
    if rng.random_bool(0.5) {
        add(&mut text, " on ", "date", DAYS.choose(rng).unwrap().to_string());
    }
    if rng.random_bool(0.4) {
        let n = rng.random_range(2..9);
        add(&mut text, " for ", "people", format!("{n} people"));
    }
    let own = if domain == "banking" { "amount" } else { "rooms" };
    if rng.random_bool(0.4) {
        let n = rng.random_range(1..500);
        let value = if own == "amount" { format!("{n} dollars") } else { format!("{} rooms", n % 5 + 1) };
        add(&mut text, " with ", own, value);
    }
    json!({"text": text, "intents": intents, "slots": slots})
}

/// Two domains, twenty fold files each with `per_file` utterances. Fold files
/// listed in `empty` are written empty.
pub fn dataset_with(per_file: usize, empty: &[usize]) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("nluplusplus");
    std::fs::create_dir_all(&root).unwrap();
    std::fs::write(root.join("ontology.json"), ontology().to_string()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for domain in ["banking", "hotels"] {
        std::fs::create_dir_all(root.join(domain)).unwrap();
        for fold in 0..20 {
            let records: Vec<Value> = if empty.contains(&fold) {
                Vec::new()
            } else {
                (0..per_file).map(|_| utterance(&mut rng, domain)).collect()
            };
            std::fs::write(root.join(domain).join(format!("fold{fold}.json")), Value::from(records).to_string())
                .unwrap();
        }
    }
    Dataset { dir }
}

pub fn dataset() -> Dataset {
    dataset_with(4, &[])
}

/// A spec over the synthetic data; `extra` is appended verbatim.
pub fn spec(data: &Dataset, name: &str, protocol: &str, domains: &[&str], extra: &str) -> RunSpec {
    RunSpec::from_toml(&spec_toml(data, name, protocol, domains, extra)).unwrap()
}

pub fn spec_toml(data: &Dataset, name: &str, protocol: &str, domains: &[&str], extra: &str) -> String {
    let domains: Vec<String> = domains.iter().map(|d| format!("\"{d}\"")).collect();
    format!(
        "name = \"{name}\"\nprotocol = \"{protocol}\"\ndomains = [{}]\noutput_dir = {:?}\n{extra}\n\
         [dataset]\nkind = \"nluplusplus\"\nroot = {:?}\n",
        domains.join(", "),
        path_str(&data.runs().join(name)),
        path_str(&data.root()),
    )
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
