//! Per-unit outcomes, aggregated result tables and their files.
//!
//! A run directory ends up with:
//!
//! ```text
//! manifest.json  spec.toml
//! units/<unit>.json            one per completed fold (or size/seed)
//! results.json                 everything below, machine-readable
//! scores.csv                   one row per (source, target, task, setting)
//! per_fold.csv                 one row per fold score
//! transfer_<task>.csv          long format source,target,micro_f1 (heatmap axes)
//! transfer_<task>_matrix.csv   the same as a square table
//! sample_efficiency.csv        n_train,seed,task,micro_f1
//! sample_efficiency_mean.csv   n_train,task,mean,seeds (learning-curve axes)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use nluqa_core::analysis::TransferMatrix;
use nluqa_core::instruction::Task;
use nluqa_core::scoring::{aggregate, EvalReport};
use nluqa_models::TrainReport;

use crate::error::{Result, RunError};
use crate::manifest::{write_atomic, write_json_atomic, RunStatus};
use crate::spec::Protocol;

/// What a score row is about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScoreKey {
    pub source: String,
    pub target: String,
    pub task: Task,
    /// Protocol variant: empty, `non-tuned`, `ve-tuned`, `multi-task`, `mc`,
    /// `zero-shot` or `n=<size>`.
    #[serde(default)]
    pub setting: String,
}

impl ScoreKey {
    pub fn new(source: &str, target: &str, task: Task, setting: impl Into<String>) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            task,
            setting: setting.into(),
        }
    }

    pub fn label(&self) -> String {
        let domains = if self.source == self.target {
            self.source.clone()
        } else {
            format!("{}->{}", self.source, self.target)
        };
        if self.setting.is_empty() {
            format!("{domains} {}", self.task)
        } else {
            format!("{domains} {} {}", self.task, self.setting)
        }
    }
}

/// One scored evaluation inside a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub key: ScoreKey,
    /// Fold id, or the seed in sample-efficiency runs.
    pub fold_id: usize,
    pub report: EvalReport,
    #[serde(default)]
    pub n_train: Option<usize>,
}

/// Everything one unit of work produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOutcome {
    pub unit: String,
    pub evaluations: Vec<Evaluation>,
    #[serde(default)]
    pub train: Vec<TrainReport>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl UnitOutcome {
    pub fn new(unit: impl Into<String>) -> Self {
        Self {
            unit: unit.into(),
            evaluations: Vec::new(),
            train: Vec::new(),
            notes: Vec::new(),
            seconds: 0.0,
        }
    }

    /// Unit ids contain `/`; files flatten them.
    pub fn file_name(unit: &str) -> String {
        format!("{}.json", unit.replace(['/', ' '], "__"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub label: String,
    pub source: String,
    pub target: String,
    pub task: Task,
    pub setting: String,
    pub folds: String,
    /// Mean over folds (or seeds), x 100.
    pub micro_f1: f64,
    /// Over counts pooled across folds, x 100.
    pub pooled_micro_f1: f64,
    pub folds_completed: usize,
    #[serde(default)]
    pub reference: Option<f64>,
}

impl ScoreRow {
    pub fn delta(&self) -> Option<f64> {
        self.reference.map(|r| self.micro_f1 - r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub n_train: usize,
    pub seed: u64,
    pub task: Task,
    pub domain: String,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMean {
    pub n_train: usize,
    pub task: Task,
    pub domain: String,
    pub mean: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLengths {
    /// Backend tokenizer id, or `whitespace` when the backend has none.
    pub tokenizer: String,
    pub domain: String,
    pub binary_mean: f64,
    pub multiple_choice_mean: f64,
    pub ratio: f64,
    pub binary_instances: usize,
    pub multiple_choice_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub name: String,
    pub protocol: Protocol,
    pub status: RunStatus,
    pub spec_hash: String,
    pub rows: Vec<ScoreRow>,
    pub reports: BTreeMap<String, EvalReport>,
    /// Keyed by task label; scores x 100 with in-domain diagonals.
    #[serde(default)]
    pub transfer: BTreeMap<String, TransferMatrix>,
    #[serde(default)]
    pub sample_efficiency: Vec<SampleRow>,
    #[serde(default)]
    pub sample_efficiency_means: Vec<SampleMean>,
    #[serde(default)]
    pub input_lengths: Option<InputLengths>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Groups evaluations by key and aggregates each group across folds.
pub fn aggregate_outcomes(outcomes: &[UnitOutcome]) -> Result<BTreeMap<ScoreKey, EvalReport>> {
    let mut groups: BTreeMap<ScoreKey, Vec<&Evaluation>> = BTreeMap::new();
    for e in outcomes.iter().flat_map(|o| &o.evaluations) {
        groups.entry(e.key.clone()).or_default().push(e);
    }
    groups
        .into_iter()
        .map(|(key, mut evals)| {
            evals.sort_by_key(|e| e.fold_id);
            let reports: Vec<EvalReport> = evals
                .iter()
                .map(|e| e.report.clone().with_fold_id(e.fold_id))
                .collect();
            Ok((key, aggregate(&reports)?))
        })
        .collect()
}

/// Transfer matrix over `domains` from aggregated cross-domain cells.
/// Missing cells (an interrupted grid) yield `None`.
pub fn transfer_matrix(domains: &[String], task: Task, cells: &BTreeMap<ScoreKey, EvalReport>) -> Option<TransferMatrix> {
    let scores: Option<Vec<Vec<f64>>> = domains
        .iter()
        .map(|s| {
            domains
                .iter()
                .map(|t| cells.get(&ScoreKey::new(s, t, task, "")).map(EvalReport::percent))
                .collect()
        })
        .collect();
    TransferMatrix::new(domains.to_vec(), scores?).ok()
}

pub fn sample_means(rows: &[SampleRow]) -> Vec<SampleMean> {
    let mut groups: BTreeMap<(String, Task, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.domain.clone(), r.task, r.n_train))
            .or_default()
            .push(r.micro_f1);
    }
    groups
        .into_iter()
        .map(|((domain, task, n_train), scores)| SampleMean {
            n_train,
            task,
            domain,
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            seeds: scores.len(),
        })
        .collect()
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    w.into_inner().map_err(|e| RunError::io("csv buffer", e))
}

impl RunResults {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join("results.json"), self)?;

        let scores = csv_bytes(|w| {
            w.write_record([
                "label", "source", "target", "task", "setting", "folds", "micro_f1", "pooled_micro_f1",
                "folds_completed", "reference", "delta", "status",
            ])?;
            for r in &self.rows {
                w.write_record([
                    r.label.clone(),
                    r.source.clone(),
                    r.target.clone(),
                    r.task.to_string(),
                    r.setting.clone(),
                    r.folds.clone(),
                    format!("{:.4}", r.micro_f1),
                    format!("{:.4}", r.pooled_micro_f1),
                    r.folds_completed.to_string(),
                    r.reference.map(|v| format!("{v}")).unwrap_or_default(),
                    r.delta().map(|v| format!("{v:.4}")).unwrap_or_default(),
                    format!("{:?}", self.status).to_lowercase(),
                ])?;
            }
            Ok(())
        })?;
        write_atomic(&dir.join("scores.csv"), &scores)?;

        let per_fold = csv_bytes(|w| {
            w.write_record(["label", "fold_id", "micro_f1"])?;
            for (label, report) in &self.reports {
                for f in &report.per_fold {
                    w.write_record([label.clone(), f.fold_id.to_string(), format!("{:.4}", f.micro_f1 * 100.0)])?;
                }
            }
            Ok(())
        })?;
        write_atomic(&dir.join("per_fold.csv"), &per_fold)?;

        for (task, m) in &self.transfer {
            let slug = task.to_lowercase();
            let long = csv_bytes(|w| {
                w.write_record(["source", "target", "micro_f1"])?;
                for (i, s) in m.domains.iter().enumerate() {
                    for (j, t) in m.domains.iter().enumerate() {
                        w.write_record([s.clone(), t.clone(), format!("{:.4}", m.scores[i][j])])?;
                    }
                }
                Ok(())
            })?;
            write_atomic(&dir.join(format!("transfer_{slug}.csv")), &long)?;
            let wide = csv_bytes(|w| {
                let mut header = vec!["source".to_string()];
                header.extend(m.domains.iter().cloned());
                w.write_record(&header)?;
                for (i, s) in m.domains.iter().enumerate() {
                    let mut row = vec![s.clone()];
                    row.extend(m.scores[i].iter().map(|v| format!("{v:.4}")));
                    w.write_record(&row)?;
                }
                Ok(())
            })?;
            write_atomic(&dir.join(format!("transfer_{slug}_matrix.csv")), &wide)?;
        }

        if !self.sample_efficiency.is_empty() {
            let rows = csv_bytes(|w| {
                w.write_record(["domain", "task", "n_train", "seed", "micro_f1"])?;
                for r in &self.sample_efficiency {
                    w.write_record([
                        r.domain.clone(),
                        r.task.to_string(),
                        r.n_train.to_string(),
                        r.seed.to_string(),
                        format!("{:.4}", r.micro_f1),
                    ])?;
                }
                Ok(())
            })?;
            write_atomic(&dir.join("sample_efficiency.csv"), &rows)?;
            let means = csv_bytes(|w| {
                w.write_record(["domain", "task", "n_train", "mean_micro_f1", "seeds"])?;
                for m in &self.sample_efficiency_means {
                    w.write_record([
                        m.domain.clone(),
                        m.task.to_string(),
                        m.n_train.to_string(),
                        format!("{:.4}", m.mean),
                        m.seeds.to_string(),
                    ])?;
                }
                Ok(())
            })?;
            write_atomic(&dir.join("sample_efficiency_mean.csv"), &means)?;
        }
        Ok(())
    }

    /// Plain-text summary for the terminal.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {} ({}) status: {:?}", self.name, self.protocol, self.status);
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>8}  {:>8}  {:>9}  {:>7}",
            "score", "folds", "micro-F1", "pooled", "reference", "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>8.2}  {:>8.2}  {:>9}  {:>7}",
                r.label,
                r.folds_completed,
                r.micro_f1,
                r.pooled_micro_f1,
                r.reference.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                r.delta().map(|v| format!("{v:+.2}")).unwrap_or_else(|| "-".into()),
            );
        }
        for m in &self.sample_efficiency_means {
            let _ = writeln!(
                out,
                "{} {} n={:<6} mean micro-F1 {:.2} over {} seed(s)",
                m.domain, m.task, m.n_train, m.mean, m.seeds
            );
        }
        if let Some(l) = &self.input_lengths {
            let _ = writeln!(
                out,
                "input length ({}, {}): multiple choice {:.2}, binary {:.2}, ratio {:.2}",
                l.tokenizer, l.domain, l.multiple_choice_mean, l.binary_mean, l.ratio
            );
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(source: &str, target: &str, fold: usize, tp: u64, fp: u64) -> Evaluation {
        Evaluation {
            key: ScoreKey::new(source, target, Task::Id, ""),
            fold_id: fold,
            report: EvalReport::from_counts(Task::Id, tp, fp, 0),
            n_train: None,
        }
    }

    #[test]
    fn labels() {
        assert_eq!(ScoreKey::new("a", "a", Task::Id, "").label(), "a ID");
        assert_eq!(ScoreKey::new("a", "b", Task::Ve, "mc").label(), "a->b VE mc");
    }

    #[test]
    fn aggregation_is_mean_of_folds() {
        let mut o1 = UnitOutcome::new("f0");
        o1.evaluations.push(eval("a", "a", 0, 1, 1));
        let mut o2 = UnitOutcome::new("f1");
        o2.evaluations.push(eval("a", "a", 1, 1, 0));
        let agg = aggregate_outcomes(&[o2, o1]).unwrap();
        let r = &agg[&ScoreKey::new("a", "a", Task::Id, "")];
        assert!((r.micro_f1 - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        assert_eq!(r.per_fold.iter().map(|f| f.fold_id).collect::<Vec<_>>(), [0, 1]);
        assert!((r.pooled_micro_f1 - 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn transfer_needs_every_cell() {
        let domains = vec!["a".to_string(), "b".to_string()];
        let mut o = UnitOutcome::new("u");
        for (s, t) in [("a", "a"), ("a", "b"), ("b", "a")] {
            o.evaluations.push(eval(s, t, 0, 1, 0));
        }
        let cells = aggregate_outcomes(std::slice::from_ref(&o)).unwrap();
        assert!(transfer_matrix(&domains, Task::Id, &cells).is_none());
        o.evaluations.push(eval("b", "b", 0, 1, 1));
        let cells = aggregate_outcomes(&[o]).unwrap();
        let m = transfer_matrix(&domains, Task::Id, &cells).unwrap();
        assert_eq!(m.scores[0][1], 100.0);
        assert!((m.scores[1][1] - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn sample_means_group_by_size() {
        let rows: Vec<SampleRow> = [(10, 0, 50.0), (10, 1, 70.0), (20, 0, 80.0)]
            .into_iter()
            .map(|(n, seed, f)| SampleRow {
                n_train: n,
                seed,
                task: Task::Id,
                domain: "d".into(),
                micro_f1: f,
            })
            .collect();
        let means = sample_means(&rows);
        assert_eq!(means.len(), 2);
        assert_eq!((means[0].n_train, means[0].mean, means[0].seeds), (10, 60.0, 2));
    }

    #[test]
    fn unit_file_names_are_flat() {
        assert_eq!(UnitOutcome::file_name("banking/fold03/ID"), "banking__fold03__ID.json");
    }
}
