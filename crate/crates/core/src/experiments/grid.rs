use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{AdaptedTo, ExperimentContext, RunConfig, RunResult, DEFAULT_SEEDS};
use crate::backend::Provenance;
use crate::corpus::{FewShotSpec, ShotCount};
use crate::error::{Error, Result};
use crate::heads::{HeadKind, NliScoring};
use crate::label::{Domain, Polarity, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DomainPair {
    pub train: Domain,
    pub test: Domain,
}

/// Cartesian product of heads, templates, sizes, seeds and domain pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub heads: Vec<HeadKind>,
    pub templates: Vec<String>,
    pub sizes: Vec<ShotCount>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub domains: Vec<DomainPair>,
    #[serde(default = "super::default_task")]
    pub test_task: Task,
    #[serde(default = "super::default_provenance")]
    pub provenance: Provenance,
    #[serde(default)]
    pub adapted_to: AdaptedTo,
    #[serde(default)]
    pub scoring: NliScoring,
    #[serde(default = "super::default_epochs")]
    pub epochs: usize,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

impl GridSpec {
    /// Expands into run configs. Baselines get no zero-shot cell, and a
    /// zero-shot cell runs once since its seed has no effect.
    pub fn expand(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &head in &self.heads {
            let templates: Vec<Option<&str>> = if head.uses_template() {
                self.templates.iter().map(|t| Some(t.as_str())).collect()
            } else {
                vec![None]
            };
            for template in templates {
                for &size in &self.sizes {
                    if size.is_zero() && head.is_baseline() {
                        continue;
                    }
                    let seeds = if size.is_zero() { &self.seeds[..self.seeds.len().min(1)] } else { &self.seeds[..] };
                    for &seed in seeds {
                        for pair in &self.domains {
                            let mut config = RunConfig::new(head, template, pair.train, FewShotSpec { size, seed });
                            config.test_domain = pair.test;
                            config.test_task = self.test_task;
                            config.provenance = if head == HeadKind::Nli { Provenance::Generic } else { self.provenance };
                            config.adapted_to = self.adapted_to;
                            config.scoring = self.scoring;
                            config.epochs = self.epochs;
                            out.push(config);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, empty) in [
            ("heads", self.heads.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("domains", self.domains.is_empty()),
        ] {
            if empty {
                problems.push(format!("grid `{name}` is empty"));
            }
        }
        if self.heads.iter().any(|h| h.uses_template()) && self.templates.is_empty() {
            problems.push("grid has prompt heads but no templates".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub config: RunConfig,
    pub error: String,
}

/// Identifies one table cell: everything but template and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub head: HeadKind,
    pub train_domain: Domain,
    pub test_domain: Domain,
    pub test_task: Task,
    pub size: ShotCount,
    pub provenance: Provenance,
}

impl CellKey {
    pub fn of(config: &RunConfig) -> Self {
        CellKey {
            head: config.head,
            train_domain: config.train_domain,
            test_domain: config.test_domain,
            test_task: config.test_task,
            size: config.few_shot.size,
            provenance: config.provenance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub key: CellKey,
    pub runs: usize,
    /// Mean over seeds, then over templates.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<Polarity, f64>,
    /// Seed means per template id; baselines use the empty id.
    pub per_template: BTreeMap<String, MetricPair>,
    /// Per-run scores, ordered by (template, seed), for significance tests.
    pub run_accuracies: Vec<f64>,
    pub run_macro_f1: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub results: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
    pub cells: Vec<AggregateCell>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregates runs into cells. The output does not depend on input order.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateCell> {
    let mut groups: BTreeMap<CellKey, BTreeMap<String, BTreeMap<u64, &RunResult>>> = BTreeMap::new();
    for result in results {
        let template = result.config.template.clone().unwrap_or_default();
        groups
            .entry(CellKey::of(&result.config))
            .or_default()
            .entry(template)
            .or_default()
            .insert(result.config.few_shot.seed, result);
    }

    groups
        .into_iter()
        .map(|(key, templates)| {
            let mut per_template = BTreeMap::new();
            let mut class_means: BTreeMap<Polarity, Vec<f64>> = BTreeMap::new();
            let mut run_accuracies = Vec::new();
            let mut run_macro_f1 = Vec::new();
            for (id, seeds) in &templates {
                let acc: Vec<f64> = seeds.values().map(|r| r.report.accuracy).collect();
                let f1: Vec<f64> = seeds.values().map(|r| r.report.macro_f1).collect();
                per_template.insert(
                    id.clone(),
                    MetricPair {
                        accuracy: mean(&acc),
                        macro_f1: mean(&f1),
                    },
                );
                for polarity in Polarity::ALL {
                    let values: Vec<f64> = seeds.values().map(|r| r.report.f1(polarity)).collect();
                    class_means.entry(polarity).or_default().push(mean(&values));
                }
                run_accuracies.extend(acc);
                run_macro_f1.extend(f1);
            }
            let template_acc: Vec<f64> = per_template.values().map(|m| m.accuracy).collect();
            let template_f1: Vec<f64> = per_template.values().map(|m| m.macro_f1).collect();
            AggregateCell {
                key,
                runs: run_accuracies.len(),
                accuracy: mean(&template_acc),
                macro_f1: mean(&template_f1),
                per_class_f1: class_means.into_iter().map(|(p, v)| (p, mean(&v))).collect(),
                per_template,
                run_accuracies,
                run_macro_f1,
            }
        })
        .collect()
}

/// Runs every grid cell on a pool of `workers` threads (0 picks the default).
/// Failed runs are recorded and do not abort the grid.
pub fn run_grid(ctx: &ExperimentContext<'_>, spec: &GridSpec, workers: usize) -> Result<GridOutcome> {
    spec.validate()?;
    let configs = spec.expand();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let outcomes: Vec<(RunConfig, Result<RunResult>)> =
        pool.install(|| configs.into_par_iter().map(|c| { let r = ctx.run_one(&c); (c, r) }).collect());

    let mut outcome = GridOutcome::default();
    for (config, result) in outcomes {
        match result {
            Ok(run) => outcome.results.push(run),
            Err(e) => {
                warn!(error = %e, "run failed");
                outcome.failures.push(RunFailure {
                    config,
                    error: e.to_string(),
                });
            }
        }
    }
    outcome.cells = aggregate(&outcome.results);
    Ok(outcome)
}
