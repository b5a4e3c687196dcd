//! Project configuration: one TOML file, with environment overrides for paths.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendEntry, BackendRegistry, TrainingSchedule};
use crate::error::{Error, Result};
use crate::experiments::{GridSpec, Split, DEFAULT_SEEDS};
use crate::label::{Domain, Task};
use crate::pretrain::{Corruption, DEFAULT_MASK_RATE};
use crate::prompting::{AspectAliases, PromptTemplate, TemplateSet, Verbalizer};

pub const ENV_DATA_ROOT: &str = "ATSC_DATA_ROOT";
pub const ENV_MODEL_ROOT: &str = "ATSC_MODEL_ROOT";
pub const ENV_OUT: &str = "ATSC_OUT";
pub const ENV_REVIEWS: &str = "ATSC_REVIEWS";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemevalFile {
    pub domain: Domain,
    pub task: Task,
    pub split: Split,
    pub path: PathBuf,
}

impl SemevalFile {
    /// The official SemEval-2014 file names. Category labels come from the
    /// restaurant files.
    pub fn standard_set() -> Vec<SemevalFile> {
        let f = |domain, task, split, path: &str| SemevalFile {
            domain,
            task,
            split,
            path: PathBuf::from(path),
        };
        vec![
            f(Domain::Laptops, Task::Atsc, Split::Train, "Laptop_Train_v2.xml"),
            f(Domain::Laptops, Task::Atsc, Split::Test, "Laptops_Test_Gold.xml"),
            f(Domain::Restaurants, Task::Atsc, Split::Train, "Restaurants_Train_v2.xml"),
            f(Domain::Restaurants, Task::Atsc, Split::Test, "Restaurants_Test_Gold.xml"),
            f(Domain::Restaurants, Task::Acsc, Split::Test, "Restaurants_Test_Gold.xml"),
        ]
    }

    /// Name of the preprocessed record file written by ingestion.
    pub fn record_name(&self) -> String {
        let task = match self.task {
            Task::Atsc => "atsc",
            Task::Acsc => "acsc",
        };
        let split = match self.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        format!("{}_{task}_{split}.jsonl", self.domain)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Base for relative SemEval and review paths.
    pub root: PathBuf,
    pub semeval: Vec<SemevalFile>,
    /// Review dump (JSON lines or `category<TAB>text`).
    pub reviews: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Registered after the three shipped templates.
    pub templates: Vec<PromptTemplate>,
    pub verbalizer: Verbalizer,
    pub aliases: AspectAliases,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            templates: Vec::new(),
            verbalizer: Verbalizer::default(),
            aliases: AspectAliases::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub mask_rate: f64,
    pub corruption: Corruption,
    /// Causal-LM window length in tokens.
    pub window: usize,
    /// In-domain reviews read from the dump; unlimited when absent.
    pub max_reviews: Option<usize>,
    pub schedule: TrainingSchedule,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mask_rate: DEFAULT_MASK_RATE,
            corruption: Corruption::MaskOnly,
            window: 128,
            max_reviews: None,
            schedule: TrainingSchedule {
                epochs: 1,
                batch_size: 16,
                learning_rate: 5e-5,
                ..TrainingSchedule::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8417".into(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_workers() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub data: DataConfig,
    /// Base for relative backend paths.
    #[serde(default)]
    pub model_root: PathBuf,
    #[serde(default)]
    pub backends: Vec<BackendEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub schedule: TrainingSchedule,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub experiment: Option<GridSpec>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

impl ProjectConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Reads `path`, applies environment overrides and resolves relative
    /// paths against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut config = Self::from_toml(&text)?;
        config.apply_env(|k| std::env::var(k).ok());
        if let Some(dir) = path.parent() {
            config.resolve_against(dir);
        }
        Ok(config)
    }

    /// Overrides path settings from `lookup` (normally the process environment).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_DATA_ROOT) {
            self.data.root = v.into();
        }
        if let Some(v) = lookup(ENV_MODEL_ROOT) {
            self.model_root = v.into();
        }
        if let Some(v) = lookup(ENV_OUT) {
            self.out = v.into();
        }
        if let Some(v) = lookup(ENV_REVIEWS) {
            self.data.reviews = Some(v.into());
        }
    }

    pub fn resolve_against(&mut self, base: &Path) {
        let join = |p: &mut PathBuf, base: &Path| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data.root, base);
        join(&mut self.model_root, base);
        join(&mut self.out, base);
    }

    pub fn semeval_path(&self, file: &SemevalFile) -> PathBuf {
        self.data.root.join(&file.path)
    }

    pub fn reviews_path(&self) -> Option<PathBuf> {
        self.data.reviews.as_ref().map(|p| self.data.root.join(p))
    }

    /// Backend registry with paths resolved against `model_root`.
    pub fn registry(&self) -> Result<BackendRegistry> {
        let mut registry = BackendRegistry::default();
        for entry in &self.backends {
            let mut entry = entry.clone();
            entry.path = self.model_root.join(&entry.path);
            registry.register(entry)?;
        }
        Ok(registry)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        let mut set = TemplateSet::default();
        for t in &self.prompts.templates {
            set.register(t.clone())?;
        }
        Ok(set)
    }

    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("seed list is empty".into());
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            problems.push("seed list has duplicates".into());
        }
        if !(0.0..=1.0).contains(&self.pretrain.mask_rate) || self.pretrain.mask_rate == 0.0 {
            problems.push(format!("mask_rate {} is outside (0, 1]", self.pretrain.mask_rate));
        }
        if self.pretrain.window < 2 {
            problems.push("pretrain window must be at least 2".into());
        }
        for file in &self.data.semeval {
            let path = self.semeval_path(file);
            if !path.is_file() {
                problems.push(format!("SemEval file {} does not exist", path.display()));
            }
        }
        let mut seen = BTreeSet::new();
        for file in &self.data.semeval {
            if !seen.insert((file.domain, file.task, file.split)) {
                problems.push(format!("{} listed twice", file.record_name()));
            }
        }
        if let Some(path) = self.reviews_path() {
            if !path.is_file() {
                problems.push(format!("review corpus {} does not exist", path.display()));
            }
        }
        for entry in &self.backends {
            if let Err(e) = entry.descriptor.validate() {
                problems.push(format!("backend {}: {e}", entry.path.display()));
            }
            let path = self.model_root.join(&entry.path);
            if !path.exists() {
                problems.push(format!("backend {} does not exist", path.display()));
            }
        }
        if let Err(e) = self.registry() {
            problems.push(e.to_string());
        }
        match self.templates() {
            Ok(templates) => {
                if let Some(grid) = &self.experiment {
                    for id in &grid.templates {
                        if templates.get(id).is_err() {
                            problems.push(format!("experiment names unknown template `{id}`"));
                        }
                    }
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        if let Some(grid) = &self.experiment {
            if let Err(Error::Config(p)) = grid.validate() {
                problems.extend(p);
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}
