//! Published scores shipped with the crate, used as expectations in result
//! tables and by the acceptance suite.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

use nluqa_core::analysis::TransferMatrix;
use nluqa_core::instruction::{InstructionTemplate, Task};

use crate::spec::ReferenceSpec;

const REFERENCE_TOML: &str = include_str!("../reference/reference.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct McInputLength {
    pub multiple_choice: f64,
    pub binary: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AdapterReference {
    pub reduction_factor: usize,
    pub trainable_parameters: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorrelationRow {
    pub template: String,
    /// `sim-e` or `sim-c`.
    pub kind: String,
    pub values: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorrelationTable {
    pub domains: Vec<String>,
    pub row: Vec<CorrelationRow>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MatrixReference {
    pub domains: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PilotRow {
    pub template: String,
    pub banking: f64,
    pub hotels: f64,
    pub average: f64,
    /// The template appears more than once with different scores.
    #[serde(default)]
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScoreReference {
    pub table: String,
    pub protocol: String,
    pub source: String,
    pub target: String,
    pub method: String,
    pub task: Task,
    pub folds: String,
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReferenceData {
    pub mc_input_length: McInputLength,
    pub adapters: AdapterReference,
    pub correlation: CorrelationTable,
    pub transfer: BTreeMap<String, MatrixReference>,
    pub pilot: Vec<PilotRow>,
    pub score: Vec<ScoreReference>,
}

pub fn reference() -> &'static ReferenceData {
    static DATA: OnceLock<ReferenceData> = OnceLock::new();
    DATA.get_or_init(|| toml::from_str(REFERENCE_TOML).expect("bundled reference table parses"))
}

impl ReferenceData {
    pub fn score(&self, table: &str, method: &str, source: &str, target: &str, task: Task, folds: &str) -> Option<f64> {
        self.score
            .iter()
            .find(|s| {
                s.table == table
                    && s.method == method
                    && s.source == source
                    && s.target == target
                    && s.task == task
                    && s.folds == folds
            })
            .map(|s| s.value)
    }

    pub fn tables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.score.iter().map(|s| s.table.as_str()).collect();
        out.dedup();
        out
    }

    /// CLINC transfer matrix for `qa-ft`, `none` or `desc`.
    pub fn transfer_matrix(&self, method: &str) -> Option<TransferMatrix> {
        let m = self.transfer.get(method)?;
        TransferMatrix::new(m.domains.clone(), m.scores.clone()).ok()
    }

    pub fn correlation(&self, template: &str, kind: &str) -> Option<&CorrelationRow> {
        self.correlation
            .row
            .iter()
            .find(|r| r.template == template && r.kind == kind)
    }

    /// Published correlation for one target domain.
    pub fn correlation_for(&self, template: &str, kind: &str, target: &str) -> Option<f64> {
        let i = self.correlation.domains.iter().position(|d| d == target)?;
        self.correlation(template, kind).map(|r| r.values[i])
    }

    /// Pilot-study score of a grid template on `banking` or `hotels` (fold 0
    /// of the 10-fold setup). `None` for templates listed ambiguously or
    /// not at all.
    pub fn pilot(&self, template: &InstructionTemplate, domain: &str) -> Option<f64> {
        let mut rows = self.pilot.iter().filter(|r| {
            r.template
                .parse::<InstructionTemplate>()
                .is_ok_and(|t| t == *template)
        });
        let row = rows.next()?;
        if row.ambiguous {
            return None;
        }
        match domain {
            "banking" => Some(row.banking),
            "hotels" => Some(row.hotels),
            _ => None,
        }
    }

    /// Expected value for one result row under a run's reference selection.
    pub fn lookup(
        &self,
        selection: &ReferenceSpec,
        setting: &str,
        source: &str,
        target: &str,
        task: Task,
        folds: &str,
    ) -> Option<f64> {
        let method = match (setting, &selection.baseline_method) {
            ("non-tuned", Some(baseline)) => baseline.as_str(),
            ("non-tuned", None) => return None,
            _ => selection.method.as_str(),
        };
        match selection.table.as_str() {
            "clinc-transfer" => {
                let m = self.transfer_matrix(method)?;
                (task == Task::Id).then(|| m.get(source, target).ok()).flatten()
            }
            "pilot" => {
                let template: InstructionTemplate = method.parse().ok()?;
                (source == target && task == Task::Id && folds == "10")
                    .then(|| self.pilot(&template, source))
                    .flatten()
            }
            table => self.score(table, method, source, target, task, folds),
        }
    }
}
