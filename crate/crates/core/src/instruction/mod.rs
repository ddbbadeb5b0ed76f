//! Compilation of annotated utterances into question-answering instructions.
//!
//! Every utterance yields one instance per intent class (answer `yes`/`no`)
//! and one per slot class (answer: the value, or `unanswerable`). The
//! multiple-choice variant instead lists all classes as options in a single
//! instance.

mod template;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedUtterance, DomainOntology, IntentClass, SlotClass};
use crate::{Error, Result};

pub use template::{ContextOption, InstructionTemplate, PreQuestion, PromptSuffix};

pub const YES: &str = "yes";
pub const NO: &str = "no";
pub const UNANSWERABLE: &str = "unanswerable";
/// Separator for several values of one slot, and for multiple-choice answers.
pub const VALUE_SEPARATOR: &str = "; ";
pub const NONE_OF_THE_ABOVE: &str = "none of the above";

const MC_INTENT_QUESTION: &str = "which of the following did the user intend?";
const MC_SLOT_QUESTION: &str = "which of the following are mentioned, and with what values?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    IdBinary,
    VeExtractive,
    McId,
    McVe,
}

impl TaskKind {
    pub fn task(self) -> Task {
        match self {
            TaskKind::IdBinary | TaskKind::McId => Task::Id,
            TaskKind::VeExtractive | TaskKind::McVe => Task::Ve,
        }
    }

    pub fn is_multiple_choice(self) -> bool {
        matches!(self, TaskKind::McId | TaskKind::McVe)
    }
}

/// The two dialogue-NLU tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Id,
    Ve,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Id => "ID",
            Task::Ve => "VE",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "id" | "intent" | "intents" => Ok(Task::Id),
            "ve" | "value" | "slots" => Ok(Task::Ve),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// One (input, target) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InstructionInstance {
    pub input_text: String,
    pub target_text: String,
    pub task_kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    pub utterance_id: String,
}

fn strip_question_mark(text: &str) -> &str {
    text.trim().trim_end_matches('?').trim_end()
}

pub fn question_for_intent(class: &IntentClass) -> String {
    match &class.question {
        Some(question) => question.clone(),
        None => format!("did the user {}?", strip_question_mark(&class.description)),
    }
}

pub fn question_for_slot(class: &SlotClass) -> String {
    match &class.question {
        Some(question) => question.clone(),
        None => format!("what is the {} mentioned?", strip_question_mark(&class.description)),
    }
}

/// Binary target for one intent class.
pub fn id_target(utterance: &AnnotatedUtterance, intent: &str) -> &'static str {
    if utterance.gold_intents.contains(intent) {
        YES
    } else {
        NO
    }
}

/// Extractive target for one slot class: its values joined, or `unanswerable`.
pub fn ve_target(utterance: &AnnotatedUtterance, slot: &str) -> String {
    let values = utterance.slot_values(slot);
    if values.is_empty() {
        UNANSWERABLE.to_string()
    } else {
        values.join(VALUE_SEPARATOR)
    }
}

pub fn compile_id(
    utterance: &AnnotatedUtterance,
    ontology: &DomainOntology,
    template: &InstructionTemplate,
) -> Vec<InstructionInstance> {
    ontology
        .intents
        .iter()
        .map(|class| InstructionInstance {
            input_text: template.render(&utterance.text, &question_for_intent(class)),
            target_text: id_target(utterance, &class.name).to_string(),
            task_kind: TaskKind::IdBinary,
            class_name: Some(class.name.clone()),
            utterance_id: utterance.id.clone(),
        })
        .collect()
}

pub fn compile_ve(
    utterance: &AnnotatedUtterance,
    ontology: &DomainOntology,
    template: &InstructionTemplate,
) -> Vec<InstructionInstance> {
    ontology
        .slots
        .iter()
        .map(|class| InstructionInstance {
            input_text: template.render(&utterance.text, &question_for_slot(class)),
            target_text: ve_target(utterance, &class.name),
            task_kind: TaskKind::VeExtractive,
            class_name: Some(class.name.clone()),
            utterance_id: utterance.id.clone(),
        })
        .collect()
}

/// Option text of an intent in the multiple-choice format, e.g.
/// `intend to deny something` becomes `to deny something`.
pub fn intent_option_text(class: &IntentClass) -> String {
    let description = strip_question_mark(&class.description);
    description
        .strip_prefix("intend ")
        .unwrap_or(description)
        .to_string()
}

pub fn slot_option_text(class: &SlotClass) -> String {
    strip_question_mark(&class.description).to_string()
}

/// Intent options in ontology order, without the trailing none option.
pub fn intent_options(ontology: &DomainOntology) -> Vec<String> {
    ontology.intents.iter().map(intent_option_text).collect()
}

pub fn slot_options(ontology: &DomainOntology) -> Vec<String> {
    ontology.slots.iter().map(slot_option_text).collect()
}

fn with_none_option(mut options: Vec<String>) -> Vec<String> {
    options.push(NONE_OF_THE_ABOVE.to_string());
    options
}

/// Multiple-choice ID target: gold options in ontology order, or the none option.
pub fn mc_id_target(utterance: &AnnotatedUtterance, ontology: &DomainOntology) -> String {
    let chosen: Vec<String> = ontology
        .intents
        .iter()
        .filter(|c| utterance.gold_intents.contains(&c.name))
        .map(intent_option_text)
        .collect();
    if chosen.is_empty() {
        NONE_OF_THE_ABOVE.to_string()
    } else {
        chosen.join(VALUE_SEPARATOR)
    }
}

/// Multiple-choice VE target: `<slot option>: <value>` entries in ontology order.
pub fn mc_ve_target(utterance: &AnnotatedUtterance, ontology: &DomainOntology) -> String {
    let mut entries = Vec::new();
    for class in &ontology.slots {
        let option = slot_option_text(class);
        for value in utterance.slot_values(&class.name) {
            entries.push(format!("{option}: {value}"));
        }
    }
    if entries.is_empty() {
        NONE_OF_THE_ABOVE.to_string()
    } else {
        entries.join(VALUE_SEPARATOR)
    }
}

pub fn compile_mc(
    utterance: &AnnotatedUtterance,
    ontology: &DomainOntology,
    template: &InstructionTemplate,
) -> InstructionInstance {
    InstructionInstance {
        input_text: template.render_multiple_choice(
            &utterance.text,
            MC_INTENT_QUESTION,
            &with_none_option(intent_options(ontology)),
        ),
        target_text: mc_id_target(utterance, ontology),
        task_kind: TaskKind::McId,
        class_name: None,
        utterance_id: utterance.id.clone(),
    }
}

pub fn compile_mc_ve(
    utterance: &AnnotatedUtterance,
    ontology: &DomainOntology,
    template: &InstructionTemplate,
) -> InstructionInstance {
    InstructionInstance {
        input_text: template.render_multiple_choice(
            &utterance.text,
            MC_SLOT_QUESTION,
            &with_none_option(slot_options(ontology)),
        ),
        target_text: mc_ve_target(utterance, ontology),
        task_kind: TaskKind::McVe,
        class_name: None,
        utterance_id: utterance.id.clone(),
    }
}

/// Compiles a list of utterances for one task kind, utterance by utterance.
pub fn compile_all(
    utterances: &[AnnotatedUtterance],
    ontology: &DomainOntology,
    template: &InstructionTemplate,
    kind: TaskKind,
) -> Vec<InstructionInstance> {
    match kind {
        TaskKind::IdBinary => utterances
            .iter()
            .flat_map(|u| compile_id(u, ontology, template))
            .collect(),
        TaskKind::VeExtractive => utterances
            .iter()
            .flat_map(|u| compile_ve(u, ontology, template))
            .collect(),
        TaskKind::McId => utterances
            .iter()
            .map(|u| compile_mc(u, ontology, template))
            .collect(),
        TaskKind::McVe => utterances
            .iter()
            .map(|u| compile_mc_ve(u, ontology, template))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SlotAnnotation;

    fn ontology() -> DomainOntology {
        DomainOntology::new(
            "hotels",
            vec![
                IntentClass::new("booking", "intend to talk about some booking"),
                IntentClass::new("change", "intend to change something"),
                IntentClass::new("room", "intend to talk about rooms"),
                IntentClass::new("wifi", "intend to ask about wifi"),
            ],
            vec![
                SlotClass::new("num_guests", "number of people"),
                SlotClass::new("date", "date"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn intent_questions() {
        let booking = IntentClass::new("booking", "intend to talk about some booking");
        assert_eq!(
            question_for_intent(&booking),
            "did the user intend to talk about some booking?"
        );
        let mut asked = IntentClass::new("x", "intend to ask something?");
        assert_eq!(question_for_intent(&asked), "did the user intend to ask something?");
        asked.question = Some("Is It A Question".into());
        assert_eq!(question_for_intent(&asked), "Is It A Question");
    }

    #[test]
    fn slot_questions() {
        let people = SlotClass::new("num_guests", "number of people");
        assert_eq!(question_for_slot(&people), "what is the number of people mentioned?");
        let mut overridden = people.clone();
        overridden.question = Some("how many?".into());
        assert_eq!(question_for_slot(&overridden), "how many?");
    }

    #[test]
    fn id_compilation_marks_gold_intents() {
        let o = ontology();
        let u = AnnotatedUtterance::new("u1", "wanna change my room reservation")
            .with_intents(["change", "room", "booking"]);
        let instances = compile_id(&u, &o, &InstructionTemplate::DESC);
        assert_eq!(instances.len(), 4);
        let targets: Vec<_> = instances.iter().map(|i| i.target_text.as_str()).collect();
        assert_eq!(targets, vec!["yes", "yes", "yes", "no"]);
        assert_eq!(instances[0].class_name.as_deref(), Some("booking"));
        assert_eq!(
            instances[0].input_text,
            "The user says: wanna change my room reservation Question: did the user intend to talk about some booking?"
        );

        let empty = AnnotatedUtterance::new("u2", "what is love");
        assert!(compile_id(&empty, &o, &InstructionTemplate::NONE)
            .iter()
            .all(|i| i.target_text == NO));
    }

    #[test]
    fn ve_compilation() {
        let o = ontology();
        let mut u = AnnotatedUtterance::new("u1", "2 of us from monday to friday")
            .with_slot("num_guests", "2");
        u.gold_slots.push(SlotAnnotation {
            slot: "date".into(),
            value: "friday".into(),
            span: Some((23, 29)),
        });
        u.gold_slots.push(SlotAnnotation {
            slot: "date".into(),
            value: "monday".into(),
            span: Some((13, 19)),
        });
        let instances = compile_ve(&u, &o, &InstructionTemplate::NONE);
        assert_eq!(instances.len(), 2);
        assert_eq!(instances[0].target_text, "2");
        assert_eq!(instances[1].target_text, "monday; friday");
        assert_eq!(
            instances[0].input_text,
            "2 of us from monday to friday what is the number of people mentioned?"
        );

        let bare = AnnotatedUtterance::new("u2", "hello");
        let instances = compile_ve(&bare, &o, &InstructionTemplate::NONE);
        assert!(instances.iter().all(|i| i.target_text == UNANSWERABLE));

        let no_slots = DomainOntology::new("clinc", o.intents.clone(), vec![]).unwrap();
        assert!(compile_ve(&u, &no_slots, &InstructionTemplate::DESC).is_empty());
    }

    #[test]
    fn multiple_choice_compilation() {
        let o = ontology();
        let u = AnnotatedUtterance::new("u1", "is there wifi in my room").with_intents(["wifi", "room"]);
        let mc = compile_mc(&u, &o, &InstructionTemplate::DESC);
        assert_eq!(mc.target_text, "to talk about rooms; to ask about wifi");
        assert_eq!(mc.task_kind, TaskKind::McId);
        assert!(mc.class_name.is_none());
        assert_eq!(
            mc.input_text,
            "The user says: is there wifi in my room Question: which of the following did the user intend?\n\
             Options:\n- to talk about some booking\n- to change something\n- to talk about rooms\n\
             - to ask about wifi\n- none of the above"
        );
        let single = AnnotatedUtterance::new("u2", "book").with_intents(["booking"]);
        assert_eq!(compile_mc(&single, &o, &InstructionTemplate::NONE).target_text, "to talk about some booking");
        let empty = AnnotatedUtterance::new("u3", "hm");
        assert_eq!(compile_mc(&empty, &o, &InstructionTemplate::NONE).target_text, NONE_OF_THE_ABOVE);

        let ve = AnnotatedUtterance::new("u4", "3 guests").with_slot("num_guests", "3");
        let mc_ve = compile_mc_ve(&ve, &o, &InstructionTemplate::NONE);
        assert_eq!(mc_ve.target_text, "number of people: 3");
        assert!(mc_ve.input_text.ends_with("- number of people\n- date\n- none of the above"));
    }

    #[test]
    fn cardinality_over_a_corpus() {
        let o = ontology();
        let utterances: Vec<_> = (0..5)
            .map(|i| AnnotatedUtterance::new(format!("u{i}"), format!("utterance {i}")))
            .collect();
        let t = InstructionTemplate::DESC;
        assert_eq!(compile_all(&utterances, &o, &t, TaskKind::IdBinary).len(), 20);
        assert_eq!(compile_all(&utterances, &o, &t, TaskKind::VeExtractive).len(), 10);
        assert_eq!(compile_all(&utterances, &o, &t, TaskKind::McId).len(), 5);
        assert_eq!(compile_all(&utterances, &o, &t, TaskKind::McVe).len(), 5);
    }

    #[test]
    fn instance_serialization_shape() {
        let o = ontology();
        let u = AnnotatedUtterance::new("u1", "hi");
        let instance = &compile_id(&u, &o, &InstructionTemplate::NONE)[0];
        let value = serde_json::to_value(instance).unwrap();
        assert_eq!(value["task_kind"], "id-binary");
        assert_eq!(value["class_name"], "booking");
        assert_eq!(value["utterance_id"], "u1");
        let mc = serde_json::to_value(compile_mc(&u, &o, &InstructionTemplate::NONE)).unwrap();
        assert!(mc.get("class_name").is_none());
        assert_eq!(mc["task_kind"], "mc-id");
    }
}
