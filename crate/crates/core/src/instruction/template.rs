//! Instruction templates: a context prefix, a pre-question marker and a prompt
//! suffix, each chosen from a small fixed inventory (4 x 4 x 3 = 48 variants).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ContextOption {
    None,
    Given,
    Sent,
    UserSaid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PreQuestion {
    None,
    Question,
    Based,
    BasedAbove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PromptSuffix {
    None,
    Answer,
    AnswerOptions,
}

impl ContextOption {
    pub const ALL: [ContextOption; 4] = [Self::None, Self::Given, Self::Sent, Self::UserSaid];

    pub fn text(self) -> Option<&'static str> {
        match self {
            Self::None => None,
            Self::Given => Some("Given the following sentence:"),
            Self::Sent => Some("Sentence:"),
            Self::UserSaid => Some("The user says:"),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Given => "given",
            Self::Sent => "sent",
            Self::UserSaid => "usersaid",
        }
    }
}

impl PreQuestion {
    pub const ALL: [PreQuestion; 4] = [Self::None, Self::Question, Self::Based, Self::BasedAbove];

    pub fn text(self) -> Option<&'static str> {
        match self {
            Self::None => None,
            Self::Question => Some("Question:"),
            Self::Based => Some("Based on the question:"),
            Self::BasedAbove => Some("Based on the question above:"),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Question => "question",
            Self::Based => "based",
            Self::BasedAbove => "basedabove",
        }
    }
}

impl PromptSuffix {
    pub const ALL: [PromptSuffix; 3] = [Self::None, Self::Answer, Self::AnswerOptions];

    pub fn tag(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Answer => "answer",
            Self::AnswerOptions => "answeroptions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstructionTemplate {
    pub context: ContextOption,
    pub pre_question: PreQuestion,
    pub prompt: PromptSuffix,
}

impl InstructionTemplate {
    /// Utterance followed directly by the question.
    pub const NONE: Self = Self {
        context: ContextOption::None,
        pre_question: PreQuestion::None,
        prompt: PromptSuffix::None,
    };

    /// `The user says: <utterance> Question: <question>`.
    pub const DESC: Self = Self {
        context: ContextOption::UserSaid,
        pre_question: PreQuestion::Question,
        prompt: PromptSuffix::None,
    };

    pub fn new(context: ContextOption, pre_question: PreQuestion, prompt: PromptSuffix) -> Self {
        Self {
            context,
            pre_question,
            prompt,
        }
    }

    /// Every template in the grid.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(48);
        for context in ContextOption::ALL {
            for pre_question in PreQuestion::ALL {
                for prompt in PromptSuffix::ALL {
                    out.push(Self::new(context, pre_question, prompt));
                }
            }
        }
        out
    }

    /// Grid tag such as `usersaid-question-none`.
    pub fn tag(&self) -> String {
        format!(
            "{}-{}-{}",
            self.context.tag(),
            self.pre_question.tag(),
            self.prompt.tag()
        )
    }

    /// Preset name (`none`, `desc`) when the template is one, else the grid tag.
    pub fn label(&self) -> String {
        match *self {
            Self::NONE => "none".to_string(),
            Self::DESC => "desc".to_string(),
            _ => self.tag(),
        }
    }

    /// Renders one binary or extractive question instruction.
    ///
    /// Parts are joined by single spaces; the yes/no options block starts on
    /// a new line.
    pub fn render(&self, utterance: &str, question: &str) -> String {
        let mut out = self.render_body(utterance, question);
        match self.prompt {
            PromptSuffix::None => {}
            PromptSuffix::Answer => out.push_str(" Answer:"),
            PromptSuffix::AnswerOptions => out.push_str("\nOptions: -yes -no\nAnswer:"),
        }
        out
    }

    /// Renders a multiple-choice instruction listing `options` one per line.
    pub fn render_multiple_choice(&self, utterance: &str, question: &str, options: &[String]) -> String {
        let mut out = self.render_body(utterance, question);
        out.push_str("\nOptions:");
        for option in options {
            out.push_str("\n- ");
            out.push_str(option);
        }
        match self.prompt {
            PromptSuffix::None => {}
            PromptSuffix::Answer => out.push_str(" Answer:"),
            PromptSuffix::AnswerOptions => out.push_str("\nAnswer:"),
        }
        out
    }

    fn render_body(&self, utterance: &str, question: &str) -> String {
        let mut out = String::with_capacity(utterance.len() + question.len() + 48);
        if let Some(context) = self.context.text() {
            out.push_str(context);
            out.push(' ');
        }
        out.push_str(utterance);
        out.push(' ');
        if let Some(marker) = self.pre_question.text() {
            out.push_str(marker);
            out.push(' ');
        }
        out.push_str(question);
        out
    }
}

impl Default for InstructionTemplate {
    fn default() -> Self {
        Self::DESC
    }
}

impl fmt::Display for InstructionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for InstructionTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lowered = s.trim().to_ascii_lowercase();
        match lowered.as_str() {
            "none" => return Ok(Self::NONE),
            "desc" | "desc." | "descriptive" => return Ok(Self::DESC),
            _ => {}
        }
        let canonical = lowered
            .replace("based-above", "basedabove")
            .replace("answer-options", "answeroptions");
        let parts: Vec<&str> = canonical.split('-').collect();
        let bad = || Error::invalid(format!("unknown template `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let context = ContextOption::ALL
            .into_iter()
            .find(|c| c.tag() == parts[0])
            .ok_or_else(bad)?;
        let pre_question = PreQuestion::ALL
            .into_iter()
            .find(|p| p.tag() == parts[1])
            .ok_or_else(bad)?;
        let prompt = PromptSuffix::ALL
            .into_iter()
            .find(|p| p.tag() == parts[2])
            .ok_or_else(bad)?;
        Ok(Self::new(context, pre_question, prompt))
    }
}

impl Serialize for InstructionTemplate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for InstructionTemplate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
