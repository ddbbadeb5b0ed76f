use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use nluqa_core::analysis::{
    class_prompts, correlation_report, render_correlation_table, CorrelationReport, PairSimilarities, TransferMatrix,
};
use nluqa_core::instruction::{InstructionTemplate, Task};
use nluqa_models::params::{ParamStore, Trainable};
use nluqa_models::t5::{T5Config, T5Model};

use nluqa_runner::backends::{build_encoder, registry_path};
use nluqa_runner::data::load_domains;
use nluqa_runner::manifest::write_json_atomic;
use nluqa_runner::reference::reference;
use nluqa_runner::spec::{
    BackendSpec, DatasetKind, DatasetSpec, EncoderSpec, FoldSpec, ReferenceSpec, SampleEfficiencySpec, TaskSelection,
};
use nluqa_runner::{run, Protocol, Result, RunError, RunOptions, RunSpec};

#[derive(Parser)]
#[command(name = "nluqa", version, about = "Instruction-tuned QA for intent detection and value extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML spec.
    Run {
        spec: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a checkpoint without training.
    ZeroShot(ProtocolArgs),
    /// Train and test within each domain.
    InDomain(ProtocolArgs),
    /// Train on the first domain, test on the second (or a full grid).
    CrossDomain(ProtocolArgs),
    /// Tune on one task, evaluate another.
    CrossTask(ProtocolArgs),
    /// Tune on ID and VE jointly.
    MultiTask(ProtocolArgs),
    /// Learning curves over training-set sizes.
    SampleEfficiency(ProtocolArgs),
    /// Multiple-choice instructions in place of one question per class.
    McAblation(ProtocolArgs),
    /// Sentence-encoder classifier baseline for intent detection.
    ClseBaseline(ProtocolArgs),
    /// Correlate CLINC transfer scores with domain similarities.
    Correlate(CorrelateArgs),
    /// Parameter counts of a T5 configuration, with and without adapters.
    Params {
        /// Registry checkpoint name or a path to a config.json.
        #[arg(long, default_value = "flan-t5-base")]
        model: String,
        #[arg(long, default_value_t = 16)]
        adapters: usize,
    },
    /// List the instruction templates.
    Templates {
        /// Render every template on this utterance and question.
        #[arg(long)]
        example: Option<String>,
    },
    /// Print bundled reference scores.
    Reference {
        #[arg(long)]
        table: Option<String>,
    },
}

#[derive(Args, Clone)]
struct ProtocolArgs {
    /// Run name; defaults to the protocol and domains.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "nluplusplus")]
    dataset: DatasetKind,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Repeatable; order matters for source/target protocols.
    #[arg(long = "domain", required = true)]
    domains: Vec<String>,
    /// Every ordered pair of domains (cross-domain only).
    #[arg(long)]
    grid: bool,
    /// 10, 20 or k:seed.
    #[arg(long, default_value = "10")]
    folds: FoldSpec,
    #[arg(long, value_delimiter = ',')]
    fold_ids: Option<Vec<usize>>,
    #[arg(long, default_value = "desc")]
    template: InstructionTemplate,
    /// id, ve or both.
    #[arg(long, default_value = "id")]
    task: TaskSelection,
    #[arg(long)]
    eval_task: Option<Task>,
    /// Registry checkpoint name, gold-oracle or tiny-random[:seed].
    #[arg(long, default_value = "flan-t5-base")]
    backend: BackendSpec,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    generation_batch: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Adapter reduction factor; full fine-tuning when unset.
    #[arg(long)]
    adapters: Option<usize>,
    /// Registry encoder name or hashing[:dim].
    #[arg(long)]
    encoder: Option<EncoderSpec>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Reference table and method to compare against.
    #[arg(long, requires = "reference_method")]
    reference_table: Option<String>,
    #[arg(long)]
    reference_method: Option<String>,
    /// Print the resolved spec and exit.
    #[arg(long)]
    print_spec: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long, default_value = "mpnet")]
    encoder: EncoderSpec,
    /// results.json of a grid run per template (`none=DIR`, `desc=DIR`);
    /// the bundled matrices are used otherwise.
    #[arg(long = "run", value_parser = parse_named_dir)]
    runs: Vec<(String, PathBuf)>,
    #[arg(long, default_value = "runs/correlation")]
    output_dir: PathBuf,
}

fn parse_named_dir(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or("expected TEMPLATE=DIR")?;
    Ok((name.to_string(), PathBuf::from(dir)))
}

impl ProtocolArgs {
    fn into_spec(self, protocol: Protocol) -> Result<RunSpec> {
        let mut backend = self.backend;
        if let BackendSpec::Checkpoint {
            registry,
            generation_batch,
            ..
        } = &mut backend
        {
            *registry = self.registry.clone();
            *generation_batch = self.generation_batch;
        }
        let encoder = self.encoder.map(|e| match e {
            EncoderSpec::Registry { name, .. } => EncoderSpec::Registry {
                name,
                registry: self.registry.clone(),
            },
            other => other,
        });
        let mut train = match self.adapters {
            Some(rf) => nluqa_models::TrainConfig::with_adapters(rf),
            None => nluqa_models::TrainConfig::default(),
        };
        if let Some(e) = self.epochs {
            train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            train.batch_size = b;
        }
        if let Some(s) = self.seed {
            train.seed = s;
        }
        train.learning_rate = self.lr.or(train.learning_rate);
        let mut clse = nluqa_models::clse::ClseConfig::default();
        if let Some(s) = self.seed {
            clse.seed = s;
        }
        let sample_efficiency = self.sizes.map(|sizes| {
            let mut se: SampleEfficiencySpec =
                toml::from_str(&format!("sizes = {sizes:?}")).expect("sample-efficiency defaults");
            if let Some(seeds) = self.seeds.clone() {
                se.seeds = seeds;
            }
            se
        });
        let name = self
            .name
            .unwrap_or_else(|| format!("{}-{}-{}", protocol, self.domains.join("-"), self.folds.label()));
        let spec = RunSpec {
            name,
            protocol,
            dataset: DatasetSpec {
                kind: self.dataset,
                root: self.data_root,
            },
            domains: self.domains,
            grid: self.grid,
            folds: self.folds,
            fold_ids: self.fold_ids,
            template: self.template,
            task: self.task,
            eval_task: self.eval_task,
            backend,
            train,
            clse,
            encoder,
            sample_efficiency,
            workers: self.workers,
            output_dir: self.output_dir,
            reference: self.reference_table.map(|table| ReferenceSpec {
                table,
                method: self.reference_method.unwrap_or_default(),
                baseline_method: None,
            }),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn execute_spec(spec: &RunSpec, force: bool) -> Result<ExitCode> {
    let output = run(spec, &RunOptions { force })?;
    print!("{}", output.results.render());
    if output.skipped {
        println!("(already complete in {}; --force reruns)", output.run_dir.display());
    } else {
        println!("results in {}", output.run_dir.display());
    }
    match output.error {
        Some(e) => {
            eprintln!("error: {e}");
            eprintln!("partial results kept; rerun the same spec to resume");
            Ok(ExitCode::from(e.exit_code() as u8))
        }
        None => Ok(ExitCode::SUCCESS),
    }
}

fn load_matrix(template: &str, runs: &[(String, PathBuf)]) -> Result<TransferMatrix> {
    if let Some((_, dir)) = runs.iter().find(|(t, _)| t == template) {
        let path = dir.join("results.json");
        let text = std::fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
        let results: nluqa_runner::RunResults = serde_json::from_str(&text)?;
        let matrix = results
            .transfer
            .get(Task::Id.label())
            .ok_or_else(|| RunError::config(format!("{} has no complete ID transfer matrix", path.display())))?;
        return Ok(matrix.clone());
    }
    reference()
        .transfer_matrix(template)
        .ok_or_else(|| RunError::config(format!("no bundled transfer matrix for `{template}`")))
}

fn correlate(args: CorrelateArgs) -> Result<ExitCode> {
    let domains = reference().correlation.domains.clone();
    let dataset = DatasetSpec {
        kind: DatasetKind::Clinc,
        root: args.data_root,
    };
    let loaded = load_domains(&dataset, &domains, FoldSpec::default())?;
    let mut utterances = BTreeMap::new();
    let mut prompts = BTreeMap::new();
    for d in &loaded {
        utterances.insert(d.name.clone(), d.corpus.utterances.iter().map(|u| u.text.clone()).collect());
        prompts.insert(d.name.clone(), class_prompts(&d.corpus.ontology));
    }
    let encoder = build_encoder(&args.encoder)?;
    info!("embedding {} domains with {}", domains.len(), encoder.id());
    let sim_e = PairSimilarities::compute(encoder.as_ref(), &utterances)?;
    let sim_c = PairSimilarities::compute(encoder.as_ref(), &prompts)?;

    let mut reports: Vec<(String, CorrelationReport)> = Vec::new();
    for template in ["none", "desc"] {
        let matrix = load_matrix(template, &args.runs)?;
        reports.push((template.to_string(), correlation_report(&matrix, &sim_e, &sim_c)?));
    }
    let rows: Vec<(&str, &CorrelationReport)> = reports.iter().map(|(t, r)| (t.as_str(), r)).collect();
    print!("{}", render_correlation_table(&rows));

    println!("\ndifference from the published values (computed - published):");
    for (template, report) in &reports {
        for (kind, values) in [("sim-e", &report.sim_e), ("sim-c", &report.sim_c)] {
            let line: Vec<String> = report
                .targets
                .iter()
                .zip(values)
                .map(|(t, v)| match reference().correlation_for(template, kind, t) {
                    Some(p) => format!("{t} {:+.3}", v - p),
                    None => format!("{t} -"),
                })
                .collect();
            println!("{template:>5} {kind}: {}", line.join(", "));
        }
    }

    std::fs::create_dir_all(&args.output_dir).map_err(|e| RunError::io(&args.output_dir, e))?;
    write_json_atomic(
        &args.output_dir.join("correlation.json"),
        &serde_json::json!({
            "encoder": encoder.id(),
            "sim_e": sim_e,
            "sim_c": sim_c,
            "reports": reports.iter().cloned().collect::<BTreeMap<_, _>>(),
        }),
    )?;
    println!("written to {}", args.output_dir.join("correlation.json").display());
    Ok(ExitCode::SUCCESS)
}

/// Bundled config next to the registry, else the cached checkpoint's own.
fn model_config(model: &str) -> Result<T5Config> {
    let direct = Path::new(model);
    if direct.is_file() {
        return Ok(T5Config::from_file(direct)?);
    }
    let registry = registry_path(None);
    let bundled = registry
        .parent()
        .unwrap_or(Path::new("."))
        .join("models")
        .join(format!("{model}.json"));
    if bundled.is_file() {
        return Ok(T5Config::from_file(&bundled)?);
    }
    let cached = nluqa_runner::backends::load_registry(None)?
        .checkpoint_dir(model)?
        .join("config.json");
    if cached.is_file() {
        return Ok(T5Config::from_file(&cached)?);
    }
    Err(RunError::config(format!("no configuration found for `{model}`")))
}

fn params(model: &str, rf: usize) -> Result<ExitCode> {
    let cfg = model_config(model)?;
    let mut store = ParamStore::recording();
    store.set_trainable(Trainable::AdaptersOnly);
    T5Model::new(&cfg, &mut store, Some(rf))?;
    let base = cfg.parameter_count();
    println!("model                     {model}");
    println!("parameters                {base}");
    println!("adapters rf{rf:<3} closed form {}", cfg.adapter_parameter_count(rf));
    println!("adapters rf{rf:<3} recorded    {}", store.trainable_parameter_count());
    println!(
        "trainable share           {:.3}%",
        100.0 * store.trainable_parameter_count() as f64 / store.parameter_count() as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn templates(example: Option<String>) -> ExitCode {
    for t in InstructionTemplate::all() {
        let marker = if t == InstructionTemplate::DESC {
            " (default)"
        } else if t == InstructionTemplate::NONE {
            " (none)"
        } else {
            ""
        };
        println!("{}{marker}", t.tag());
        if let Some(utterance) = &example {
            println!("    {}", t.render(utterance, "did the user intend to make a booking?"));
        }
    }
    ExitCode::SUCCESS
}

fn print_reference(table: Option<String>) -> ExitCode {
    let r = reference();
    for s in r.score.iter().filter(|s| table.as_deref().is_none_or(|t| t == s.table)) {
        let pair = if s.source == s.target {
            s.source.clone()
        } else {
            format!("{}->{}", s.source, s.target)
        };
        println!("{:<24} {:<16} {:<28} {} {:>3}F {:>7.2}", s.table, s.method, pair, s.task, s.folds, s.value);
    }
    if table.as_deref().is_none_or(|t| t == "pilot") {
        for p in &r.pilot {
            let flag = if p.ambiguous { "  (listed twice)" } else { "" };
            println!(
                "{:<24} {:<40} banking {:>6.2}  hotels {:>6.2}  avg {:>6.2}{flag}",
                "pilot", p.template, p.banking, p.hotels, p.average
            );
        }
    }
    if table.is_none() {
        println!(
            "mc-input-length          multiple choice {:.2}, binary {:.2}",
            r.mc_input_length.multiple_choice, r.mc_input_length.binary
        );
        println!(
            "adapters                 rf{} {} trainable",
            r.adapters.reduction_factor, r.adapters.trainable_parameters
        );
    }
    ExitCode::SUCCESS
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let (protocol, args) = match cli.command {
        Command::Run {
            spec,
            force,
            output_dir,
            workers,
        } => {
            let mut spec = RunSpec::from_file(&spec)?;
            if output_dir.is_some() {
                spec.output_dir = output_dir;
            }
            if let Some(w) = workers {
                spec.workers = w;
            }
            spec.validate()?;
            return execute_spec(&spec, force);
        }
        Command::Correlate(args) => return correlate(args),
        Command::Params { model, adapters } => return params(&model, adapters),
        Command::Templates { example } => return Ok(templates(example)),
        Command::Reference { table } => return Ok(print_reference(table)),
        Command::ZeroShot(a) => (Protocol::ZeroShot, a),
        Command::InDomain(a) => (Protocol::InDomain, a),
        Command::CrossDomain(a) => (Protocol::CrossDomain, a),
        Command::CrossTask(a) => (Protocol::CrossTask, a),
        Command::MultiTask(a) => (Protocol::MultiTask, a),
        Command::SampleEfficiency(a) => (Protocol::SampleEfficiency, a),
        Command::McAblation(a) => (Protocol::McAblation, a),
        Command::ClseBaseline(a) => (Protocol::ClseBaseline, a),
    };
    let force = args.force;
    let print_spec = args.print_spec;
    let spec = args.into_spec(protocol)?;
    if print_spec {
        print!("{}", spec.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    execute_spec(&spec, force)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
