//! Fine-tuning a tiny random T5 end to end.

use nluqa_core::corpus::{AnnotatedUtterance, DomainOntology, IntentClass, SlotClass};
use nluqa_core::instruction::{compile_all, InstructionInstance, InstructionTemplate, TaskKind};
use nluqa_models::backend::max_new_tokens;
use nluqa_models::t5::{T5Backend, T5Config};
use nluqa_models::tokenizer::TextTokenizer;
use nluqa_models::{ModelError, Seq2SeqBackend, TrainConfig};

fn data() -> (Vec<InstructionInstance>, Vec<InstructionInstance>) {
    let ontology = DomainOntology::new(
        "hotels",
        vec![
            IntentClass::new("booking", "intend to talk about some booking"),
            IntentClass::new("greet", "intend to greet someone"),
        ],
        vec![SlotClass::new("people", "number of people")],
    )
    .unwrap();
    let utts = vec![
        AnnotatedUtterance::new("u1", "change my booking").with_intents(["booking"]),
        AnnotatedUtterance::new("u2", "hello there").with_intents(["greet"]),
        AnnotatedUtterance::new("u3", "a room for 2 people").with_intents(["booking"]).with_slot("people", "2"),
        AnnotatedUtterance::new("u4", "hi we are 3").with_intents(["greet"]).with_slot("people", "3"),
    ];
    let id = compile_all(&utts, &ontology, &InstructionTemplate::DESC, TaskKind::IdBinary);
    let ve = compile_all(&utts, &ontology, &InstructionTemplate::DESC, TaskKind::VeExtractive);
    (id, ve)
}

fn backend(instances: &[InstructionInstance]) -> T5Backend {
    let mut words: Vec<String> = Vec::new();
    for i in instances {
        for text in [&i.input_text, &i.target_text] {
            words.extend(
                text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
                    .filter(|w| !w.is_empty())
                    .map(str::to_lowercase),
            );
        }
    }
    words.extend(["?", ":", ";"].map(String::from));
    let tokenizer = TextTokenizer::word_level(&words).unwrap();
    let cfg = T5Config::tiny(tokenizer.vocab_size());
    T5Backend::random("tiny", cfg, tokenizer, 7).unwrap()
}

fn fast(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        learning_rate: Some(1e-3),
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn smoke_returns_a_distinct_handle_and_leaves_the_original_alone() {
    let (id, _) = data();
    let base = backend(&id);
    let inputs: Vec<String> = id.iter().map(|i| i.input_text.clone()).collect();
    let before = base.generate(&inputs, max_new_tokens(TaskKind::IdBinary)).unwrap();
    let trained = base.train(&id, &fast(1)).unwrap();
    assert_eq!(trained.report.steps, 1);
    assert_eq!(trained.report.epoch_losses.len(), 1);
    assert_ne!(trained.backend.backend_id(), base.backend_id());
    assert_eq!(base.generate(&inputs, max_new_tokens(TaskKind::IdBinary)).unwrap(), before);
    assert_eq!(trained.backend.answer(&id).unwrap().len(), id.len());
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let (id, _) = data();
    let base = backend(&id);
    let a = base.train(&id, &fast(3)).unwrap();
    let b = base.train(&id, &fast(3)).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.backend.answer(&id).unwrap(), b.backend.answer(&id).unwrap());
}

#[test]
fn mixed_tasks_are_accepted_and_loss_drops() {
    let (id, ve) = data();
    let mut all = id.clone();
    all.extend(ve);
    let base = backend(&all);
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: Some(3e-3),
        ..TrainConfig::default()
    };
    let trained = base.train(&all, &cfg).unwrap();
    let losses = &trained.report.epoch_losses;
    assert!(losses.last().unwrap() < &(losses[0] * 0.5), "{losses:?}");
    let answers = trained.backend.answer(&all).unwrap();
    let correct = answers.iter().zip(&all).filter(|(a, i)| *a == &i.target_text).count();
    assert!(correct * 4 >= all.len() * 3, "{correct}/{} memorized", all.len());
}

#[test]
fn adapters_train_only_adapter_weights() {
    let (id, _) = data();
    let base = backend(&id);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::with_adapters(4)
    };
    let trained = base.train(&id, &cfg).unwrap();
    assert_eq!(trained.report.learning_rate, 5e-4);
    assert_eq!(
        trained.report.trainable_parameters,
        base.config().adapter_parameter_count(4)
    );
}

#[test]
fn truncation_is_counted() {
    let (id, _) = data();
    let base = backend(&id);
    let cfg = TrainConfig {
        max_input_length: 4,
        ..fast(0)
    };
    let trained = base.train(&id, &cfg).unwrap();
    assert_eq!(trained.report.truncated_inputs, id.len());
}

#[test]
fn empty_data_is_rejected() {
    let (id, _) = data();
    assert!(matches!(
        backend(&id).train(&[], &TrainConfig::default()),
        Err(ModelError::InvalidArgument(_))
    ));
}
