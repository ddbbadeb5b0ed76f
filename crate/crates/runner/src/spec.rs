//! Declarative run configuration.
//!
//! ```toml
//! name = "banking-desc-10f"
//! protocol = "in-domain"
//! domains = ["banking"]
//! folds = 10
//! template = "desc"
//! task = "id"
//!
//! [dataset]
//! kind = "nluplusplus"
//!
//! [backend]
//! kind = "checkpoint"
//! name = "flan-t5-base"
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use nluqa_core::corpus::FoldSetup;
use nluqa_core::instruction::{InstructionTemplate, Task, TaskKind};
use nluqa_models::clse::ClseConfig;
use nluqa_models::TrainConfig;

use crate::error::{Result, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    ZeroShot,
    InDomain,
    CrossDomain,
    CrossTask,
    MultiTask,
    SampleEfficiency,
    McAblation,
    ClseBaseline,
}

impl Protocol {
    pub const ALL: [Protocol; 8] = [
        Protocol::ZeroShot,
        Protocol::InDomain,
        Protocol::CrossDomain,
        Protocol::CrossTask,
        Protocol::MultiTask,
        Protocol::SampleEfficiency,
        Protocol::McAblation,
        Protocol::ClseBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::ZeroShot => "zero-shot",
            Protocol::InDomain => "in-domain",
            Protocol::CrossDomain => "cross-domain",
            Protocol::CrossTask => "cross-task",
            Protocol::MultiTask => "multi-task",
            Protocol::SampleEfficiency => "sample-efficiency",
            Protocol::McAblation => "mc-ablation",
            Protocol::ClseBaseline => "clse-baseline",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| RunError::config(format!("unknown protocol `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[serde(alias = "nlu++")]
    Nluplusplus,
    #[serde(alias = "clinc150", alias = "clinc-150")]
    Clinc,
}

impl DatasetKind {
    /// Directory name under the data root.
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetKind::Nluplusplus => "nluplusplus",
            DatasetKind::Clinc => "clinc150",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nluplusplus" | "nlu++" => Ok(DatasetKind::Nluplusplus),
            "clinc" | "clinc150" | "clinc-150" => Ok(DatasetKind::Clinc),
            other => Err(RunError::config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub root: Option<PathBuf>,
}

/// Published 10/20-fold setups or a seeded `k`-fold split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldSpec {
    Preset(FoldSetup),
    Custom { k: usize, seed: u64 },
}

impl Default for FoldSpec {
    fn default() -> Self {
        FoldSpec::Preset(FoldSetup::TenFold)
    }
}

impl FoldSpec {
    pub fn count(self) -> usize {
        match self {
            FoldSpec::Preset(setup) => setup.folds(),
            FoldSpec::Custom { k, .. } => k,
        }
    }

    pub fn label(self) -> String {
        match self {
            FoldSpec::Preset(setup) => setup.folds().to_string(),
            FoldSpec::Custom { k, seed } => format!("{k}-seed{seed}"),
        }
    }
}

impl FromStr for FoldSpec {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(setup) = s.parse::<FoldSetup>() {
            return Ok(FoldSpec::Preset(setup));
        }
        let bad = || RunError::config(format!("unknown fold setup `{s}` (10, 20 or k:seed)"));
        let (k, seed) = s.split_once(':').ok_or_else(bad)?;
        Ok(FoldSpec::Custom {
            k: k.trim().parse().map_err(|_| bad())?,
            seed: seed.trim().parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for FoldSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FoldSpec::Preset(setup) => serializer.serialize_str(&setup.folds().to_string()),
            FoldSpec::Custom { k, seed } => {
                #[derive(Serialize)]
                struct Custom {
                    k: usize,
                    seed: u64,
                }
                Custom { k: *k, seed: *seed }.serialize(serializer)
            }
        }
    }
}

impl<'de> Deserialize<'de> for FoldSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
            Custom {
                k: usize,
                #[serde(default)]
                seed: u64,
            },
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(n) => n.to_string().parse().map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Custom { k, seed } => Ok(FoldSpec::Custom { k, seed }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskSelection {
    #[default]
    Id,
    Ve,
    Both,
}

impl TaskSelection {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskSelection::Id => vec![Task::Id],
            TaskSelection::Ve => vec![Task::Ve],
            TaskSelection::Both => vec![Task::Id, Task::Ve],
        }
    }
}

impl FromStr for TaskSelection {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" | "id+ve" => Ok(TaskSelection::Both),
            other => match other.parse::<Task>() {
                Ok(Task::Id) => Ok(TaskSelection::Id),
                Ok(Task::Ve) => Ok(TaskSelection::Ve),
                Err(_) => Err(RunError::config(format!("unknown task `{s}`"))),
            },
        }
    }
}

/// Instruction kind for a task, binary/extractive or multiple choice.
pub fn task_kind(task: Task, multiple_choice: bool) -> TaskKind {
    match (task, multiple_choice) {
        (Task::Id, false) => TaskKind::IdBinary,
        (Task::Ve, false) => TaskKind::VeExtractive,
        (Task::Id, true) => TaskKind::McId,
        (Task::Ve, true) => TaskKind::McVe,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendSpec {
    /// A named checkpoint from the model registry.
    Checkpoint {
        name: String,
        #[serde(default)]
        registry: Option<PathBuf>,
        #[serde(default)]
        generation_batch: Option<usize>,
    },
    /// Answers from gold labels; scores 1.0 on any pipeline that is correct.
    GoldOracle,
    /// A tiny randomly initialised T5 with a word-level vocabulary built
    /// from the run's instructions. Exercises training without weights.
    TinyRandom {
        #[serde(default)]
        seed: u64,
    },
}

impl FromStr for BackendSpec {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "gold-oracle" | "oracle" => return Ok(BackendSpec::GoldOracle),
            "tiny-random" => return Ok(BackendSpec::TinyRandom { seed: 0 }),
            _ => {}
        }
        if let Some(seed) = s.strip_prefix("tiny-random:") {
            let seed = seed
                .parse()
                .map_err(|_| RunError::config(format!("bad tiny-random seed in `{s}`")))?;
            return Ok(BackendSpec::TinyRandom { seed });
        }
        let name = s.strip_prefix("checkpoint:").unwrap_or(s);
        if name.is_empty() {
            return Err(RunError::config("empty backend name"));
        }
        Ok(BackendSpec::Checkpoint {
            name: name.to_string(),
            registry: None,
            generation_batch: None,
        })
    }
}

fn default_hash_dimension() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderSpec {
    Registry {
        name: String,
        #[serde(default)]
        registry: Option<PathBuf>,
    },
    Hashing {
        #[serde(default = "default_hash_dimension")]
        dimension: usize,
    },
}

impl FromStr for EncoderSpec {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "hashing" {
            return Ok(EncoderSpec::Hashing {
                dimension: default_hash_dimension(),
            });
        }
        if let Some(dim) = s.strip_prefix("hashing:") {
            let dimension = dim
                .parse()
                .map_err(|_| RunError::config(format!("bad hashing dimension in `{s}`")))?;
            return Ok(EncoderSpec::Hashing { dimension });
        }
        if s.is_empty() {
            return Err(RunError::config("empty encoder name"));
        }
        Ok(EncoderSpec::Registry {
            name: s.to_string(),
            registry: None,
        })
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_test_size() -> usize {
    nluqa_core::corpus::SAMPLE_EFFICIENCY_TEST_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEfficiencySpec {
    pub sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

/// Which published numbers to print next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub table: String,
    pub method: String,
    /// Method name for untuned baseline rows (cross-task).
    #[serde(default)]
    pub baseline_method: Option<String>,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub protocol: Protocol,
    pub dataset: DatasetSpec,
    pub domains: Vec<String>,
    /// Cross-domain only: every ordered pair of `domains`, in-domain on the
    /// diagonal.
    #[serde(default)]
    pub grid: bool,
    #[serde(default)]
    pub folds: FoldSpec,
    /// Subset of folds to run; all folds when unset.
    #[serde(default)]
    pub fold_ids: Option<Vec<usize>>,
    #[serde(default)]
    pub template: InstructionTemplate,
    #[serde(default)]
    pub task: TaskSelection,
    /// Cross-task only: the task evaluated after tuning on `task`.
    #[serde(default)]
    pub eval_task: Option<Task>,
    pub backend: BackendSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub clse: ClseConfig,
    #[serde(default)]
    pub encoder: Option<EncoderSpec>,
    #[serde(default)]
    pub sample_efficiency: Option<SampleEfficiencySpec>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| RunError::config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| RunError::config(e.to_string()))
    }

    /// Directory the run writes to: `output_dir`, else `runs/<name>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    /// SHA-256 over the run spec with the fields that do not change results
    /// (`workers`, `output_dir`) cleared.
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = default_workers();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("run spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn is_multiple_choice(&self) -> bool {
        self.protocol == Protocol::McAblation
    }

    /// Source and target for two-domain protocols.
    pub fn transfer_pair(&self) -> Option<(&str, &str)> {
        match self.domains.as_slice() {
            [source, target] if !self.grid => Some((source, target)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RunError::config(m));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return fail(format!("run name `{}` must be non-empty [A-Za-z0-9._-]", self.name));
        }
        if self.domains.is_empty() {
            return fail("at least one domain is required".into());
        }
        let unique: BTreeSet<&String> = self.domains.iter().collect();
        if unique.len() != self.domains.len() {
            return fail(format!("domains {:?} contain duplicates", self.domains));
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if self.grid && self.protocol != Protocol::CrossDomain {
            return fail("grid mode is only available for cross-domain runs".into());
        }
        if self.dataset.kind == DatasetKind::Clinc && self.task != TaskSelection::Id {
            return fail("CLINC-150 has no slots; task must be `id`".into());
        }
        if let FoldSpec::Custom { k, .. } = self.folds {
            if k < 2 {
                return fail(format!("custom fold count {k} must be at least 2"));
            }
        }
        if let Some(ids) = &self.fold_ids {
            if ids.is_empty() {
                return fail("fold_ids is empty".into());
            }
            if let Some(bad) = ids.iter().find(|&&i| i >= self.folds.count()) {
                return fail(format!("fold id {bad} out of range for {} folds", self.folds.count()));
            }
        }
        self.train.validate()?;
        self.clse.validate()?;

        let two_domains = self.domains.len() == 2;
        match self.protocol {
            Protocol::CrossDomain => {
                if self.grid {
                    if self.domains.len() < 2 {
                        return fail("a transfer grid needs at least two domains".into());
                    }
                } else if !two_domains {
                    return fail("cross-domain runs take exactly two domains: [source, target]".into());
                }
            }
            Protocol::MultiTask => {
                if self.task != TaskSelection::Both {
                    return fail("multi-task runs require task = \"both\"".into());
                }
                if self.domains.len() > 2 {
                    return fail("multi-task runs take one domain, or [source, target]".into());
                }
            }
            Protocol::McAblation => {
                if self.domains.len() > 2 {
                    return fail("mc-ablation runs take one domain, or [source, target]".into());
                }
            }
            Protocol::CrossTask => {
                if self.task == TaskSelection::Both {
                    return fail("cross-task runs tune on a single task".into());
                }
                let tuned = self.task.tasks()[0];
                match self.eval_task {
                    None => return fail("cross-task runs need eval_task".into()),
                    Some(t) if t == tuned => {
                        return fail(format!("eval_task must differ from the tuning task {tuned}"))
                    }
                    Some(_) => {}
                }
            }
            Protocol::ClseBaseline => {
                if self.task != TaskSelection::Id {
                    return fail("CL-SE supports intent detection only".into());
                }
                if self.encoder.is_none() {
                    return fail("clse-baseline runs need an encoder".into());
                }
            }
            Protocol::SampleEfficiency => {
                let Some(se) = &self.sample_efficiency else {
                    return fail("sample-efficiency runs need a [sample_efficiency] table".into());
                };
                if se.sizes.is_empty() || se.seeds.is_empty() {
                    return fail("sample-efficiency sizes and seeds must be non-empty".into());
                }
                if se.sizes.contains(&0) {
                    return fail("sample-efficiency sizes must be positive".into());
                }
                if !se.sizes.windows(2).all(|w| w[0] < w[1]) {
                    return fail(format!("sample-efficiency sizes {:?} must be strictly ascending", se.sizes));
                }
                if se.test_size == 0 {
                    return fail("sample-efficiency test_size must be positive".into());
                }
            }
            Protocol::ZeroShot | Protocol::InDomain => {}
        }
        if self.eval_task.is_some() && self.protocol != Protocol::CrossTask {
            return fail("eval_task is only meaningful for cross-task runs".into());
        }
        Ok(())
    }
}
