//! Experiment protocols: compile, train, generate, decode and score, fold by
//! fold, with manifests written before any training and results persisted
//! as units complete.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use log::{info, warn};

use nluqa_core::corpus::{sample_efficiency_split_with, AnnotatedUtterance, DomainOntology, FoldSplit};
use nluqa_core::embedding::SentenceEncoder;
use nluqa_core::instruction::{compile_all, InstructionInstance, InstructionTemplate, Task, TaskKind};
use nluqa_core::scoring::{assemble, micro_f1, EvalReport, Prediction};
use nluqa_models::clse::train_clse;
use nluqa_models::{Seq2SeqBackend, TrainConfig};

use crate::backends::{build_backend, build_encoder};
use crate::data::{load_domains, select_folds, LoadedDomain};
use crate::error::{Result, RunError};
use crate::manifest::{unix_now, write_json_atomic, Manifest, RunStatus};
use crate::reference::reference;
use crate::results::{
    aggregate_outcomes, sample_means, transfer_matrix, Evaluation, InputLengths, RunResults, SampleRow, ScoreKey,
    ScoreRow, UnitOutcome,
};
use crate::spec::{task_kind, Protocol, RunSpec};

const UNITS_DIR: &str = "units";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Rerun even when a completed run with the same spec exists.
    pub force: bool,
}

pub struct RunOutput {
    pub results: RunResults,
    pub manifest: Manifest,
    pub run_dir: PathBuf,
    /// The run was already complete and nothing was recomputed.
    pub skipped: bool,
    /// Set when a unit failed; `results` then holds the partial scores.
    pub error: Option<RunError>,
}

impl RunOutput {
    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.results.status == RunStatus::Complete
    }
}

/// Scores one task on `utterances` with `model`.
pub fn evaluate(
    model: &dyn Seq2SeqBackend,
    utterances: &[AnnotatedUtterance],
    ontology: &DomainOntology,
    template: &InstructionTemplate,
    kind: TaskKind,
) -> Result<EvalReport> {
    let instances = compile_all(utterances, ontology, template, kind);
    let answers = model.answer(&instances)?;
    let predictions = assemble(&instances, &answers, ontology)?;
    Ok(micro_f1(kind.task(), &predictions, utterances)?)
}

/// Fine-tunes `base` on `data`, or returns `None` (with a note) for
/// backends that cannot be trained.
fn fine_tune(
    base: &dyn Seq2SeqBackend,
    data: &[InstructionInstance],
    cfg: &TrainConfig,
    outcome: &mut UnitOutcome,
) -> Result<Option<Box<dyn Seq2SeqBackend>>> {
    if !base.is_trainable() {
        outcome
            .notes
            .push(format!("backend {} is not trainable; evaluated without training", base.backend_id()));
        return Ok(None);
    }
    let trained = base.train(data, cfg)?;
    let report = &trained.report;
    if report.truncated_inputs > 0 {
        outcome.notes.push(format!(
            "{}: {} training inputs truncated to {} tokens",
            outcome.unit, report.truncated_inputs, cfg.max_input_length
        ));
    }
    if report.truncated_targets > 0 {
        outcome.notes.push(format!(
            "{}: {} training targets truncated to {} tokens",
            outcome.unit, report.truncated_targets, cfg.max_target_length
        ));
    }
    outcome.train.push(trained.report);
    Ok(Some(trained.backend))
}

type Job<'a> = Box<dyn Fn() -> Result<UnitOutcome> + Send + Sync + 'a>;

struct Unit<'a> {
    id: String,
    job: Job<'a>,
}

struct Ctx<'a> {
    spec: &'a RunSpec,
    domains: &'a [LoadedDomain],
    folds: Vec<Vec<FoldSplit>>,
    backend: Option<&'a dyn Seq2SeqBackend>,
    encoder: Option<&'a dyn SentenceEncoder>,
    run_dir: &'a Path,
}

impl<'a> Ctx<'a> {
    fn backend(&self) -> &'a dyn Seq2SeqBackend {
        self.backend.expect("protocol has a seq2seq backend")
    }

    fn domain(&self, name: &str) -> (usize, &'a LoadedDomain) {
        let i = self.domains.iter().position(|d| d.name == name).expect("domain loaded");
        (i, &self.domains[i])
    }

    fn setting(&self) -> &'static str {
        match self.spec.protocol {
            Protocol::McAblation => "mc",
            Protocol::MultiTask => "multi-task",
            Protocol::ZeroShot => "zero-shot",
            _ => "",
        }
    }

    fn kind(&self, task: Task) -> TaskKind {
        task_kind(task, self.spec.is_multiple_choice())
    }
}

fn fold_unit_id(domain: &str, fold: usize, task: Option<Task>) -> String {
    match task {
        Some(t) => format!("{domain}/fold{fold:02}/{t}"),
        None => format!("{domain}/fold{fold:02}"),
    }
}

/// Source fold `i` trains, target fold `i` evaluates.
fn paired_fold<'f>(target_folds: &'f [FoldSplit], fold_id: usize, source: &str, target: &str) -> Result<&'f FoldSplit> {
    target_folds.iter().find(|f| f.fold_id == fold_id).ok_or_else(|| {
        RunError::config(format!("{source} fold {fold_id} has no counterpart in {target}"))
    })
}

fn single_domain_units<'a>(ctx: &'a Ctx<'a>) -> Vec<Unit<'a>> {
    let spec = ctx.spec;
    let mut units = Vec::new();
    for (di, domain) in ctx.domains.iter().enumerate() {
        for fold in &ctx.folds[di] {
            for task in spec.task.tasks() {
                let id = fold_unit_id(&domain.name, fold.fold_id, Some(task));
                units.push(Unit {
                    id: id.clone(),
                    job: Box::new(move || {
                        let mut out = UnitOutcome::new(&id);
                        let corpus = &domain.corpus;
                        let kind = ctx.kind(task);
                        let train = corpus.select(&fold.train_ids)?;
                        let test = corpus.select(&fold.test_ids)?;
                        let data = compile_all(&train, &corpus.ontology, &spec.template, kind);
                        let tuned = fine_tune(ctx.backend(), &data, &spec.train, &mut out)?;
                        let model = tuned.as_deref().unwrap_or(ctx.backend());
                        let report = evaluate(model, &test, &corpus.ontology, &spec.template, kind)?;
                        out.evaluations.push(Evaluation {
                            key: ScoreKey::new(&domain.name, &domain.name, task, ctx.setting()),
                            fold_id: fold.fold_id,
                            report,
                            n_train: None,
                        });
                        Ok(out)
                    }),
                });
            }
        }
    }
    units
}

fn zero_shot_units<'a>(ctx: &'a Ctx<'a>) -> Vec<Unit<'a>> {
    let spec = ctx.spec;
    let mut units = Vec::new();
    for (di, domain) in ctx.domains.iter().enumerate() {
        for fold in &ctx.folds[di] {
            let id = fold_unit_id(&domain.name, fold.fold_id, None);
            units.push(Unit {
                id: id.clone(),
                job: Box::new(move || {
                    let mut out = UnitOutcome::new(&id);
                    let corpus = &domain.corpus;
                    let test = corpus.select(&fold.test_ids)?;
                    for task in spec.task.tasks() {
                        let report = evaluate(ctx.backend(), &test, &corpus.ontology, &spec.template, ctx.kind(task))?;
                        out.evaluations.push(Evaluation {
                            key: ScoreKey::new(&domain.name, &domain.name, task, ctx.setting()),
                            fold_id: fold.fold_id,
                            report,
                            n_train: None,
                        });
                    }
                    Ok(out)
                }),
            });
        }
    }
    units
}

/// Trains on `source` and evaluates on each of `targets` (cross-domain,
/// grid rows and the two-domain MC ablation).
fn transfer_units<'a>(ctx: &'a Ctx<'a>, sources: Vec<&'a str>, targets: Vec<&'a str>) -> Result<Vec<Unit<'a>>> {
    let spec = ctx.spec;
    let mut units = Vec::new();
    for source in sources {
        let (si, src) = ctx.domain(source);
        let mut pairs: Vec<(&'a LoadedDomain, Vec<&'a FoldSplit>)> = Vec::new();
        for &target in &targets {
            let (ti, tgt) = ctx.domain(target);
            if ctx.folds[si].len() != ctx.folds[ti].len() {
                return Err(RunError::config(format!(
                    "{source} has {} folds but {target} has {}",
                    ctx.folds[si].len(),
                    ctx.folds[ti].len()
                )));
            }
            let paired = ctx.folds[si]
                .iter()
                .map(|f| paired_fold(&ctx.folds[ti], f.fold_id, source, target))
                .collect::<Result<Vec<_>>>()?;
            pairs.push((tgt, paired));
        }
        let pairs = Arc::new(pairs);
        for (position, fold) in ctx.folds[si].iter().enumerate() {
            for task in spec.task.tasks() {
                let id = fold_unit_id(source, fold.fold_id, Some(task));
                let pairs = Arc::clone(&pairs);
                units.push(Unit {
                    id: id.clone(),
                    job: Box::new(move || {
                        let mut out = UnitOutcome::new(&id);
                        let kind = ctx.kind(task);
                        let train = src.corpus.select(&fold.train_ids)?;
                        let data = compile_all(&train, &src.corpus.ontology, &spec.template, kind);
                        let tuned = fine_tune(ctx.backend(), &data, &spec.train, &mut out)?;
                        let model = tuned.as_deref().unwrap_or(ctx.backend());
                        for (tgt, folds) in pairs.iter() {
                            let test = tgt.corpus.select(&folds[position].test_ids)?;
                            let report = evaluate(model, &test, &tgt.corpus.ontology, &spec.template, kind)?;
                            out.evaluations.push(Evaluation {
                                key: ScoreKey::new(source, &tgt.name, task, ctx.setting()),
                                fold_id: fold.fold_id,
                                report,
                                n_train: None,
                            });
                        }
                        Ok(out)
                    }),
                });
            }
        }
    }
    Ok(units)
}

fn multi_task_units<'a>(ctx: &'a Ctx<'a>) -> Result<Vec<Unit<'a>>> {
    let spec = ctx.spec;
    let source = &ctx.domains[0];
    let (ti, target) = ctx.domain(&spec.domains[spec.domains.len() - 1]);
    let mut units = Vec::new();
    for fold in &ctx.folds[0] {
        let test_fold = paired_fold(&ctx.folds[ti], fold.fold_id, &source.name, &target.name)?;
        let id = fold_unit_id(&source.name, fold.fold_id, None);
        units.push(Unit {
            id: id.clone(),
            job: Box::new(move || {
                let mut out = UnitOutcome::new(&id);
                let train = source.corpus.select(&fold.train_ids)?;
                let mut data = Vec::new();
                for task in [Task::Id, Task::Ve] {
                    data.extend(compile_all(&train, &source.corpus.ontology, &spec.template, ctx.kind(task)));
                }
                let tuned = fine_tune(ctx.backend(), &data, &spec.train, &mut out)?;
                let model = tuned.as_deref().unwrap_or(ctx.backend());
                let test = target.corpus.select(&test_fold.test_ids)?;
                for task in [Task::Id, Task::Ve] {
                    let report = evaluate(model, &test, &target.corpus.ontology, &spec.template, ctx.kind(task))?;
                    out.evaluations.push(Evaluation {
                        key: ScoreKey::new(&source.name, &target.name, task, ctx.setting()),
                        fold_id: fold.fold_id,
                        report,
                        n_train: None,
                    });
                }
                Ok(out)
            }),
        });
    }
    Ok(units)
}

fn cross_task_units<'a>(ctx: &'a Ctx<'a>) -> Vec<Unit<'a>> {
    let spec = ctx.spec;
    let tuned_task = spec.task.tasks()[0];
    let eval_task = spec.eval_task.expect("validated");
    let mut units = Vec::new();
    for (di, domain) in ctx.domains.iter().enumerate() {
        for fold in &ctx.folds[di] {
            let id = fold_unit_id(&domain.name, fold.fold_id, None);
            units.push(Unit {
                id: id.clone(),
                job: Box::new(move || {
                    let mut out = UnitOutcome::new(&id);
                    let corpus = &domain.corpus;
                    let test = corpus.select(&fold.test_ids)?;
                    let eval_kind = ctx.kind(eval_task);
                    let untuned = evaluate(ctx.backend(), &test, &corpus.ontology, &spec.template, eval_kind)?;
                    out.evaluations.push(Evaluation {
                        key: ScoreKey::new(&domain.name, &domain.name, eval_task, "non-tuned"),
                        fold_id: fold.fold_id,
                        report: untuned,
                        n_train: None,
                    });
                    let train = corpus.select(&fold.train_ids)?;
                    let data = compile_all(&train, &corpus.ontology, &spec.template, ctx.kind(tuned_task));
                    let tuned = fine_tune(ctx.backend(), &data, &spec.train, &mut out)?;
                    let model = tuned.as_deref().unwrap_or(ctx.backend());
                    let report = evaluate(model, &test, &corpus.ontology, &spec.template, eval_kind)?;
                    out.evaluations.push(Evaluation {
                        key: ScoreKey::new(
                            &domain.name,
                            &domain.name,
                            eval_task,
                            format!("{}-tuned", tuned_task.label().to_lowercase()),
                        ),
                        fold_id: fold.fold_id,
                        report,
                        n_train: None,
                    });
                    Ok(out)
                }),
            });
        }
    }
    units
}

fn sample_efficiency_units<'a>(ctx: &'a Ctx<'a>) -> Result<Vec<Unit<'a>>> {
    let spec = ctx.spec;
    let se = spec.sample_efficiency.as_ref().expect("validated");
    let mut units = Vec::new();
    for domain in ctx.domains {
        let pool = Arc::new(domain.corpus.select(&domain.pool_ids)?);
        for &seed in &se.seeds {
            let mut test_ids: Option<Vec<String>> = None;
            for &size in &se.sizes {
                let (_, test) = sample_efficiency_split_with(&pool, se.test_size, size, seed)?;
                let ids: Vec<String> = test.iter().map(|u| u.id.clone()).collect();
                match &test_ids {
                    None => test_ids = Some(ids),
                    Some(first) if *first != ids => {
                        return Err(RunError::Unit {
                            unit: format!("{}/seed{seed}", domain.name),
                            message: format!("test set for n_train={size} differs from the other sizes"),
                        })
                    }
                    Some(_) => {}
                }
            }
            for &size in &se.sizes {
                for task in spec.task.tasks() {
                    let id = format!("{}/n{size}/seed{seed}/{task}", domain.name);
                    let pool = Arc::clone(&pool);
                    units.push(Unit {
                        id: id.clone(),
                        job: Box::new(move || {
                            let mut out = UnitOutcome::new(&id);
                            let corpus = &domain.corpus;
                            let (train, test) = sample_efficiency_split_with(&pool, se.test_size, size, seed)?;
                            let kind = ctx.kind(task);
                            let data = compile_all(&train, &corpus.ontology, &spec.template, kind);
                            let cfg = TrainConfig {
                                seed: spec.train.seed ^ seed,
                                ..spec.train.clone()
                            };
                            let tuned = fine_tune(ctx.backend(), &data, &cfg, &mut out)?;
                            let model = tuned.as_deref().unwrap_or(ctx.backend());
                            let report = evaluate(model, &test, &corpus.ontology, &spec.template, kind)?;
                            out.evaluations.push(Evaluation {
                                key: ScoreKey::new(&domain.name, &domain.name, task, format!("n={size}")),
                                fold_id: seed as usize,
                                report,
                                n_train: Some(size),
                            });
                            Ok(out)
                        }),
                    });
                }
            }
        }
    }
    Ok(units)
}

fn clse_units<'a>(ctx: &'a Ctx<'a>) -> Vec<Unit<'a>> {
    let spec = ctx.spec;
    let mut units = Vec::new();
    for (di, domain) in ctx.domains.iter().enumerate() {
        for fold in &ctx.folds[di] {
            let id = fold_unit_id(&domain.name, fold.fold_id, Some(Task::Id));
            units.push(Unit {
                id: id.clone(),
                job: Box::new(move || {
                    let mut out = UnitOutcome::new(&id);
                    let encoder = ctx.encoder.expect("clse runs have an encoder");
                    let corpus = &domain.corpus;
                    let train = corpus.select(&fold.train_ids)?;
                    let test = corpus.select(&fold.test_ids)?;
                    let texts = |utts: &[AnnotatedUtterance]| utts.iter().map(|u| u.text.clone()).collect::<Vec<_>>();
                    let train_emb = encoder.embed(&texts(&train))?;
                    let gold: Vec<BTreeSet<String>> = train.iter().map(|u| u.gold_intents.clone()).collect();
                    let classifier = train_clse(&train_emb, &gold, &corpus.ontology, &spec.clse)?;
                    classifier.save(
                        &ctx.run_dir
                            .join("classifiers")
                            .join(&domain.name)
                            .join(format!("fold{:02}", fold.fold_id)),
                    )?;
                    let test_emb = encoder.embed(&texts(&test))?;
                    let predictions = test
                        .iter()
                        .zip(&test_emb)
                        .map(|(u, e)| {
                            Ok(Prediction {
                                intents: classifier.predict_default(e)?,
                                ..Prediction::new(&u.id)
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    out.evaluations.push(Evaluation {
                        key: ScoreKey::new(&domain.name, &domain.name, Task::Id, ""),
                        fold_id: fold.fold_id,
                        report: micro_f1(Task::Id, &predictions, &test)?,
                        n_train: None,
                    });
                    Ok(out)
                }),
            });
        }
    }
    units
}

fn build_units<'a>(ctx: &'a Ctx<'a>) -> Result<Vec<Unit<'a>>> {
    let spec = ctx.spec;
    let names: Vec<&'a str> = spec.domains.iter().map(String::as_str).collect();
    match spec.protocol {
        Protocol::InDomain => Ok(single_domain_units(ctx)),
        Protocol::ZeroShot => Ok(zero_shot_units(ctx)),
        Protocol::CrossTask => Ok(cross_task_units(ctx)),
        Protocol::MultiTask => multi_task_units(ctx),
        Protocol::SampleEfficiency => sample_efficiency_units(ctx),
        Protocol::ClseBaseline => Ok(clse_units(ctx)),
        Protocol::CrossDomain if spec.grid => transfer_units(ctx, names.clone(), names),
        Protocol::CrossDomain => transfer_units(ctx, vec![names[0]], vec![names[1]]),
        Protocol::McAblation if names.len() == 2 => transfer_units(ctx, vec![names[0]], vec![names[1]]),
        Protocol::McAblation => Ok(single_domain_units(ctx)),
    }
}

/// Runs units on up to `workers` threads. Stops handing out new units after
/// the first failure; finished units are reported through `on_done`.
fn execute(
    units: &[Unit<'_>],
    workers: usize,
    on_done: &(dyn Fn(&UnitOutcome) -> Result<()> + Sync),
) -> (Vec<(usize, UnitOutcome)>, Option<RunError>) {
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let finished: Mutex<Vec<(usize, UnitOutcome)>> = Mutex::new(Vec::new());
    let first_error: Mutex<Option<RunError>> = Mutex::new(None);
    let fail = |unit: &str, message: String| {
        failed.store(true, Ordering::SeqCst);
        let mut slot = first_error.lock().expect("error lock");
        if slot.is_none() {
            *slot = Some(RunError::Unit {
                unit: unit.to_string(),
                message,
            });
        }
    };
    let worker = || loop {
        if failed.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(unit) = units.get(i) else { break };
        info!("unit {} ({}/{}) started", unit.id, i + 1, units.len());
        let started = Instant::now();
        match (unit.job)() {
            Ok(mut outcome) => {
                outcome.seconds = started.elapsed().as_secs_f64();
                info!("unit {} finished in {:.1}s", unit.id, outcome.seconds);
                if let Err(e) = on_done(&outcome) {
                    fail(&unit.id, e.to_string());
                }
                finished.lock().expect("results lock").push((i, outcome));
            }
            Err(e) => {
                warn!("unit {} failed: {e}", unit.id);
                fail(&unit.id, e.to_string());
            }
        }
    };
    let threads = workers.clamp(1, units.len().max(1));
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }
    let mut finished = finished.into_inner().expect("results lock");
    finished.sort_by_key(|(i, _)| *i);
    (finished, first_error.into_inner().expect("error lock"))
}

/// Mean tokenized length of binary ID instructions against multiple-choice
/// ID instructions over a whole domain.
pub fn input_lengths(
    backend: &dyn Seq2SeqBackend,
    domain: &LoadedDomain,
    template: &InstructionTemplate,
) -> InputLengths {
    let utts = &domain.corpus.utterances;
    let ontology = &domain.corpus.ontology;
    let binary = compile_all(utts, ontology, template, TaskKind::IdBinary);
    let mc = compile_all(utts, ontology, template, TaskKind::McId);
    let tokenizer_works = binary.first().and_then(|i| backend.token_count(&i.input_text)).is_some();
    let count = |text: &str| {
        if tokenizer_works {
            backend.token_count(text).unwrap_or(0)
        } else {
            text.split_whitespace().count()
        }
    };
    let mean = |xs: &[InstructionInstance]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().map(|i| count(&i.input_text) as f64).sum::<f64>() / xs.len() as f64
        }
    };
    let binary_mean = mean(&binary);
    let multiple_choice_mean = mean(&mc);
    InputLengths {
        tokenizer: if tokenizer_works {
            backend.backend_id()
        } else {
            "whitespace".to_string()
        },
        domain: domain.name.clone(),
        binary_mean,
        multiple_choice_mean,
        ratio: if binary_mean > 0.0 {
            multiple_choice_mean / binary_mean
        } else {
            0.0
        },
        binary_instances: binary.len(),
        multiple_choice_instances: mc.len(),
    }
}

/// Every text the run may feed to or expect from a model.
fn vocabulary(spec: &RunSpec, domains: &[LoadedDomain]) -> Vec<String> {
    let mut tasks: BTreeSet<Task> = spec.task.tasks().into_iter().collect();
    tasks.extend(spec.eval_task);
    if spec.protocol == Protocol::McAblation {
        tasks.insert(Task::Id);
    }
    let mut kinds: BTreeSet<TaskKind> = tasks.iter().map(|&t| task_kind(t, spec.is_multiple_choice())).collect();
    if spec.protocol == Protocol::McAblation {
        kinds.insert(TaskKind::IdBinary);
    }
    let mut texts = Vec::new();
    for d in domains {
        for &kind in &kinds {
            for i in compile_all(&d.corpus.utterances, &d.corpus.ontology, &spec.template, kind) {
                texts.push(i.input_text);
                texts.push(i.target_text);
            }
        }
    }
    texts
}

fn load_unit(dir: &Path, unit: &str) -> Option<UnitOutcome> {
    let path = dir.join(UNITS_DIR).join(UnitOutcome::file_name(unit));
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn build_results(
    spec: &RunSpec,
    outcomes: &[UnitOutcome],
    status: RunStatus,
    lengths: Option<InputLengths>,
    warnings: Vec<String>,
) -> Result<RunResults> {
    let cells = aggregate_outcomes(outcomes)?;
    let folds_label = match spec.protocol {
        Protocol::SampleEfficiency => "seeds".to_string(),
        _ => spec.folds.label(),
    };
    let rows = cells
        .iter()
        .map(|(key, report)| ScoreRow {
            label: key.label(),
            source: key.source.clone(),
            target: key.target.clone(),
            task: key.task,
            setting: key.setting.clone(),
            folds: folds_label.clone(),
            micro_f1: report.percent(),
            pooled_micro_f1: report.pooled_micro_f1 * 100.0,
            folds_completed: report.per_fold.len(),
            reference: spec.reference.as_ref().and_then(|sel| {
                reference().lookup(sel, &key.setting, &key.source, &key.target, key.task, &folds_label)
            }),
        })
        .collect();
    let reports = cells.iter().map(|(k, r)| (k.label(), r.clone())).collect();

    let mut warnings = warnings;
    let mut transfer = BTreeMap::new();
    if spec.grid {
        for task in spec.task.tasks() {
            match transfer_matrix(&spec.domains, task, &cells) {
                Some(m) => {
                    transfer.insert(task.label().to_string(), m);
                }
                None => warnings.push(format!("{task} transfer matrix is incomplete")),
            }
        }
    }

    let sample_efficiency: Vec<SampleRow> = outcomes
        .iter()
        .flat_map(|o| &o.evaluations)
        .filter_map(|e| {
            e.n_train.map(|n| SampleRow {
                n_train: n,
                seed: e.fold_id as u64,
                task: e.key.task,
                domain: e.key.source.clone(),
                micro_f1: e.report.percent(),
            })
        })
        .collect();
    let sample_efficiency_means = sample_means(&sample_efficiency);

    Ok(RunResults {
        name: spec.name.clone(),
        protocol: spec.protocol,
        status,
        spec_hash: spec.content_hash(),
        rows,
        reports,
        transfer,
        sample_efficiency,
        sample_efficiency_means,
        input_lengths: lengths,
        warnings,
    })
}

fn read_results(dir: &Path) -> Result<RunResults> {
    let path = dir.join("results.json");
    let text = std::fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs a spec end to end. Configuration problems are returned as errors
/// before anything is written; failures after the manifest exists come back
/// in [`RunOutput::error`] with partial results on disk.
pub fn run(spec: &RunSpec, options: &RunOptions) -> Result<RunOutput> {
    spec.validate()?;
    let domains = load_domains(&spec.dataset, &spec.domains, spec.folds)?;
    let folds = domains
        .iter()
        .map(|d| select_folds(&d.folds, spec.fold_ids.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let fingerprints: BTreeMap<String, String> =
        domains.iter().map(|d| (d.name.clone(), d.fingerprint.clone())).collect();
    let run_dir = spec.run_dir();

    let previous = Manifest::load(&run_dir)?;
    let probe = Manifest::new(spec, fingerprints.clone(), String::new());
    let reusable = previous.as_ref().filter(|p| !options.force && p.same_run(&probe));
    if let Some(done) = reusable.filter(|p| p.status == RunStatus::Complete) {
        if let Ok(results) = read_results(&run_dir) {
            info!("{} is already complete; use --force to rerun", run_dir.display());
            return Ok(RunOutput {
                results,
                manifest: done.clone(),
                run_dir,
                skipped: true,
                error: None,
            });
        }
    }
    let mut carried: Vec<UnitOutcome> = reusable
        .map(|p| {
            p.completed_units
                .iter()
                .filter_map(|u| load_unit(&run_dir, u))
                .collect()
        })
        .unwrap_or_default();
    if reusable.is_none() && run_dir.join(UNITS_DIR).is_dir() {
        std::fs::remove_dir_all(run_dir.join(UNITS_DIR)).map_err(|e| RunError::io(&run_dir, e))?;
    }

    type Handles = (Option<Arc<dyn Seq2SeqBackend>>, Option<Arc<dyn SentenceEncoder>>);
    let (backend, encoder): Handles =
        match spec.protocol {
            Protocol::ClseBaseline => (None, Some(build_encoder(spec.encoder.as_ref().expect("validated"))?)),
            _ => (
                Some(build_backend(&spec.backend, &domains, || vocabulary(spec, &domains))?),
                None,
            ),
        };
    let backend_id = match (&backend, &encoder) {
        (Some(b), _) => b.backend_id(),
        (None, Some(e)) => format!("clse+{}", e.id()),
        (None, None) => unreachable!(),
    };

    let mut manifest = Manifest::new(spec, fingerprints, backend_id);
    manifest.completed_units = carried.iter().map(|o| o.unit.clone()).collect();
    for note in carried.iter().flat_map(|o| &o.notes) {
        manifest.warn(note.clone());
    }
    std::fs::create_dir_all(&run_dir).map_err(|e| RunError::io(&run_dir, e))?;
    manifest.save(&run_dir)?;

    let lengths = match (&backend, spec.protocol) {
        (Some(b), Protocol::McAblation) => Some(input_lengths(b.as_ref(), &domains[0], &spec.template)),
        _ => None,
    };

    let ctx = Ctx {
        spec,
        domains: &domains,
        folds,
        backend: backend.as_deref(),
        encoder: encoder.as_deref(),
        run_dir: &run_dir,
    };
    let units = match build_units(&ctx) {
        Ok(units) => units,
        Err(e) => {
            manifest.status = RunStatus::Partial;
            manifest.error = Some(e.to_string());
            manifest.save(&run_dir)?;
            return Err(e);
        }
    };
    let done: BTreeSet<String> = carried.iter().map(|o| o.unit.clone()).collect();
    let pending: Vec<Unit> = units.into_iter().filter(|u| !done.contains(&u.id)).collect();
    if !done.is_empty() {
        info!("resuming: {} unit(s) already complete, {} to run", done.len(), pending.len());
    }

    let shared = Mutex::new(manifest);
    let on_done = |outcome: &UnitOutcome| -> Result<()> {
        write_json_atomic(&run_dir.join(UNITS_DIR).join(UnitOutcome::file_name(&outcome.unit)), outcome)?;
        let mut m = shared.lock().expect("manifest lock");
        m.completed_units.push(outcome.unit.clone());
        for note in &outcome.notes {
            m.warn(note.clone());
        }
        m.save(&run_dir)
    };
    let (finished, error) = execute(&pending, spec.workers, &on_done);
    let mut manifest = shared.into_inner().expect("manifest lock");
    carried.extend(finished.into_iter().map(|(_, o)| o));

    let status = if error.is_none() {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    let results = build_results(spec, &carried, status, lengths, manifest.warnings.clone())?;
    results.write(&run_dir)?;
    manifest.status = status;
    manifest.finished_unix = Some(unix_now());
    manifest.error = error.as_ref().map(|e| e.to_string());
    manifest.save(&run_dir)?;
    Ok(RunOutput {
        results,
        manifest,
        run_dir: run_dir.clone(),
        skipped: false,
        error,
    })
}
