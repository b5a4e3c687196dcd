//! Experiment protocols: single runs, seed/template/size grids, cross-domain
//! transfer, category transfer and the aspect ablation.

mod grid;
mod store;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::backend::{
    Backend, BackendDescriptor, BackendEntry, BackendFactory, BackendRegistry, FitReport, LoadOptions,
    Provenance, TrainingSchedule,
};
use crate::corpus::{sample_few_shot, FewShotSpec, LabeledExample, ShotCount};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::heads::{HeadKind, HeadSetup, NliScoring, Prediction};
use crate::label::{AspectKind, Domain, Task};
use crate::metrics::{score, EvalReport};
use crate::prompting::{AspectAliases, PromptTemplate, TemplateSet, Verbalizer};

pub use grid::{aggregate, run_grid, AggregateCell, CellKey, DomainPair, GridOutcome, GridSpec, MetricPair, RunFailure};
pub use store::{read_results, write_grid, write_run, ResultIndex};

/// The fixed seed list used when a config does not name its own.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Which domain a domain-adapted backend was adapted to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptedTo {
    #[default]
    TrainDomain,
    TestDomain,
}

fn default_epochs() -> usize {
    20
}

fn default_task() -> Task {
    Task::Atsc
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunConfig {
    pub head: HeadKind,
    /// Template id; absent for baselines.
    #[serde(default)]
    pub template: Option<String>,
    pub train_domain: Domain,
    pub test_domain: Domain,
    /// Test split task; `acsc` evaluates on aspect categories.
    #[serde(default = "default_task")]
    pub test_task: Task,
    pub few_shot: FewShotSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default)]
    pub adapted_to: AdaptedTo,
    #[serde(default)]
    pub scoring: NliScoring,
}

fn default_provenance() -> Provenance {
    Provenance::Generic
}

impl RunConfig {
    /// In-domain ATSC run on the generic backend.
    pub fn new(head: HeadKind, template: Option<&str>, domain: Domain, few_shot: FewShotSpec) -> Self {
        RunConfig {
            head,
            template: template.map(str::to_string),
            train_domain: domain,
            test_domain: domain,
            test_task: Task::Atsc,
            few_shot,
            epochs: default_epochs(),
            provenance: Provenance::Generic,
            adapted_to: AdaptedTo::TrainDomain,
            scoring: NliScoring::default(),
        }
    }

    pub fn is_zero_shot(&self) -> bool {
        self.few_shot.size.is_zero()
    }

    pub fn backend_descriptor(&self) -> BackendDescriptor {
        let family = self.head.family();
        match self.provenance {
            Provenance::Generic => BackendDescriptor::generic(family),
            Provenance::DomainAdapted => {
                let domain = match self.adapted_to {
                    AdaptedTo::TrainDomain => self.train_domain,
                    AdaptedTo::TestDomain => self.test_domain,
                };
                BackendDescriptor::domain_adapted(family, domain)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.head.is_baseline() && self.is_zero_shot() {
            problems.push(format!("{} is undefined without training examples", self.head));
        }
        if self.head.uses_template() && self.template.is_none() {
            problems.push(format!("{} needs a template", self.head));
        }
        if self.head.is_baseline() && self.template.is_some() {
            problems.push(format!("{} takes no template", self.head));
        }
        if self.epochs == 0 && !self.is_zero_shot() {
            problems.push("epochs must be positive".into());
        }
        if let Err(e) = self.backend_descriptor().validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Preprocessed splits keyed by (domain, task, split).
#[derive(Debug, Clone, Default)]
pub struct DataStore {
    splits: HashMap<(Domain, Task, Split), Arc<Vec<LabeledExample>>>,
}

impl DataStore {
    pub fn insert(&mut self, domain: Domain, task: Task, split: Split, examples: Vec<LabeledExample>) {
        self.splits.insert((domain, task, split), Arc::new(examples));
    }

    pub fn get(&self, domain: Domain, task: Task, split: Split) -> Result<Arc<Vec<LabeledExample>>> {
        self.splits.get(&(domain, task, split)).cloned().ok_or_else(|| {
            Error::InvalidInput(format!(
                "no {} {} {} split loaded",
                domain,
                match task {
                    Task::Atsc => "atsc",
                    Task::Acsc => "acsc",
                },
                match split {
                    Split::Train => "train",
                    Split::Test => "test",
                }
            ))
        })
    }
}

/// Everything a run needs besides its config.
pub struct ExperimentContext<'a> {
    pub data: &'a DataStore,
    pub registry: &'a BackendRegistry,
    pub factory: &'a dyn BackendFactory,
    pub templates: &'a TemplateSet,
    pub verbalizer: &'a Verbalizer,
    pub aliases: &'a AspectAliases,
    /// Batch size, learning rate, weight decay; epochs and seed come from the run.
    pub schedule: &'a TrainingSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fingerprint: String,
    pub config: RunConfig,
    pub report: EvalReport,
    pub final_train_loss: Option<f64>,
    pub fit: Option<FitReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<Prediction>,
}

impl ExperimentContext<'_> {
    fn entry(&self, config: &RunConfig) -> Result<&BackendEntry> {
        self.registry.find(&config.backend_descriptor())
    }

    pub fn schedule_for(&self, config: &RunConfig) -> TrainingSchedule {
        TrainingSchedule {
            epochs: config.epochs,
            seed: config.few_shot.seed,
            ..self.schedule.clone()
        }
    }

    pub fn fingerprint(&self, config: &RunConfig) -> String {
        let path = self.entry(config).map(|e| e.path.clone()).ok();
        let schedule = self.schedule_for(config);
        fingerprint(&(config, &schedule, path, self.verbalizer))
    }

    pub fn template(&self, config: &RunConfig) -> Result<Option<&PromptTemplate>> {
        config.template.as_deref().map(|id| self.templates.get(id)).transpose()
    }

    /// Loads the run's backend and fine-tunes it on the sampled subset.
    /// Zero-shot runs skip `fit` entirely.
    pub fn train(&self, config: &RunConfig) -> Result<(Box<dyn Backend>, Option<FitReport>)> {
        config.validate()?;
        let entry = self.entry(config)?;
        let mut backend = self.factory.load(
            entry,
            LoadOptions {
                seed: config.few_shot.seed,
                readout: config.head.readout(),
            },
        )?;
        let subset = self.training_subset(config)?;
        if subset.is_empty() {
            return Ok((backend, None));
        }
        let setup = HeadSetup {
            kind: config.head,
            template: self.template(config)?,
            verbalizer: self.verbalizer,
            scoring: config.scoring,
        };
        let instances = subset
            .iter()
            .map(|e| setup.training_instance(e))
            .collect::<Result<Vec<_>>>()?;
        let report = backend.fit(&instances, &self.schedule_for(config))?;
        Ok((backend, Some(report)))
    }

    /// The few-shot subset `train` fits on.
    pub fn training_subset(&self, config: &RunConfig) -> Result<Vec<LabeledExample>> {
        if config.is_zero_shot() {
            return Ok(Vec::new());
        }
        let pool = self.data.get(config.train_domain, Task::Atsc, Split::Train)?;
        sample_few_shot(&pool, config.few_shot)
    }

    pub fn test_set(&self, config: &RunConfig) -> Result<Arc<Vec<LabeledExample>>> {
        self.data.get(config.test_domain, config.test_task, Split::Test)
    }

    pub fn run_one(&self, config: &RunConfig) -> Result<RunResult> {
        let fp = self.fingerprint(config);
        self.run_inner(config, &fp).map_err(|e| Error::Run {
            fingerprint: fp.clone(),
            source: Box::new(e),
        })
    }

    fn run_inner(&self, config: &RunConfig, fp: &str) -> Result<RunResult> {
        info!(fingerprint = fp, head = %config.head, template = ?config.template, size = %config.few_shot.size, seed = config.few_shot.seed, "run");
        let (backend, fit) = self.train(config)?;
        let setup = HeadSetup {
            kind: config.head,
            template: self.template(config)?,
            verbalizer: self.verbalizer,
            scoring: config.scoring,
        };
        let test = self.test_set(config)?;
        let (predictions, report) = evaluate(&setup, backend.as_ref(), &test, self.aliases)?;
        Ok(RunResult {
            fingerprint: fp.to_string(),
            config: config.clone(),
            report: report.with_fingerprint(fp),
            final_train_loss: fit.as_ref().and_then(FitReport::final_loss),
            fit,
            predictions,
        })
    }

    /// Trains on `train_domain` and tests on the other domain.
    pub fn cross_domain(&self, config: &RunConfig) -> Result<RunResult> {
        if config.train_domain == config.test_domain {
            return Err(Error::InvalidInput("cross-domain run needs different train and test domains".into()));
        }
        self.run_one(config)
    }
}

/// Scores every test example. Category aspects pass through `aliases` first.
pub fn evaluate(
    setup: &HeadSetup,
    backend: &dyn Backend,
    test: &[LabeledExample],
    aliases: &AspectAliases,
) -> Result<(Vec<Prediction>, EvalReport)> {
    let mut predictions = Vec::with_capacity(test.len());
    for example in test {
        let distribution = if example.aspect_kind == AspectKind::Category {
            let aliased = example.with_aspect(aliases.resolve(&example.aspect));
            setup.predict(&aliased, backend)?
        } else {
            setup.predict(example, backend)?
        };
        predictions.push(Prediction {
            source_id: example.source_id.clone(),
            gold: example.polarity,
            predicted: distribution.argmax(),
            distribution,
        });
    }
    let gold: Vec<_> = predictions.iter().map(|p| p.gold).collect();
    let predicted: Vec<_> = predictions.iter().map(|p| p.predicted).collect();
    let report = score(&gold, &predicted)?;
    Ok((predictions, report))
}

/// Evaluates an ATSC-trained (or zero-shot) model on aspect-category data.
pub fn acsc_transfer(
    setup: &HeadSetup,
    backend: &dyn Backend,
    acsc_test: &[LabeledExample],
    aliases: &AspectAliases,
) -> Result<EvalReport> {
    if let Some(e) = acsc_test.iter().find(|e| e.aspect_kind != AspectKind::Category) {
        return Err(Error::InvalidInput(format!("{} is not a category example", e.source_id)));
    }
    Ok(evaluate(setup, backend, acsc_test, aliases)?.1)
}

/// The constant aspect substituted into prompts by [`aspect_ablation`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectReplacement {
    pub text: String,
    /// Switch `is`/`was` to `are`/`were` in the template.
    pub plural: bool,
}

impl Default for AspectReplacement {
    fn default() -> Self {
        AspectReplacement {
            text: "things".into(),
            plural: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub original: EvalReport,
    pub replaced: EvalReport,
    pub delta_accuracy: f64,
    pub delta_macro_f1: f64,
}

/// Re-evaluates with every aspect replaced by a constant in the prompt or
/// hypotheses only; the review text is untouched.
pub fn aspect_ablation(
    setup: &HeadSetup,
    backend: &dyn Backend,
    test: &[LabeledExample],
    replacement: &AspectReplacement,
) -> Result<AblationResult> {
    let template = setup
        .template
        .ok_or_else(|| Error::InvalidInput("aspect ablation needs a prompt head".into()))?;
    let none = AspectAliases::default();
    let (_, original) = evaluate(setup, backend, test, &none)?;

    let adjusted = if replacement.plural {
        template.pluralized()
    } else {
        template.clone()
    };
    let replaced_setup = HeadSetup {
        template: Some(&adjusted),
        ..setup.clone()
    };
    let replaced_examples: Vec<_> = test.iter().map(|e| e.with_aspect(&replacement.text)).collect();
    let (_, replaced) = evaluate(&replaced_setup, backend, &replaced_examples, &none)?;
    Ok(AblationResult {
        delta_accuracy: replaced.accuracy - original.accuracy,
        delta_macro_f1: replaced.macro_f1 - original.macro_f1,
        original,
        replaced,
    })
}

/// Size grid shorthand used by config files.
pub fn parse_sizes(sizes: &[ShotCount]) -> Vec<ShotCount> {
    let mut out = sizes.to_vec();
    out.sort();
    out.dedup();
    out
}
