//! The scoring and training surface every pretrained-model backend provides.
//!
//! Heads and experiment protocols only ever talk to a [`Backend`]; everything
//! framework-specific (tokenizers, tensors, optimizers) lives behind it.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{Domain, Polarity};
use crate::prompting::PromptMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendFamily {
    MaskedLm,
    CausalLm,
    Nli,
    PairClassifier,
}

impl BackendFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendFamily::MaskedLm => "masked_lm",
            BackendFamily::CausalLm => "causal_lm",
            BackendFamily::Nli => "nli",
            BackendFamily::PairClassifier => "pair_classifier",
        }
    }
}

impl BackendFamily {
    pub const ALL: [BackendFamily; 4] = [
        BackendFamily::MaskedLm,
        BackendFamily::CausalLm,
        BackendFamily::Nli,
        BackendFamily::PairClassifier,
    ];
}

impl std::str::FromStr for BackendFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackendFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown backend family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generic,
    DomainAdapted,
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Provenance::Generic),
            "domain_adapted" => Ok(Provenance::DomainAdapted),
            other => Err(Error::InvalidInput(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub family: BackendFamily,
    pub provenance: Provenance,
    #[serde(default)]
    pub domain: Option<Domain>,
}

impl BackendDescriptor {
    pub fn generic(family: BackendFamily) -> Self {
        BackendDescriptor {
            family,
            provenance: Provenance::Generic,
            domain: None,
        }
    }

    pub fn domain_adapted(family: BackendFamily, domain: Domain) -> Self {
        BackendDescriptor {
            family,
            provenance: Provenance::DomainAdapted,
            domain: Some(domain),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == BackendFamily::Nli && self.provenance != Provenance::Generic {
            return Err(Error::InvalidInput(
                "NLI backends are never adapted on review text; provenance must be generic".into(),
            ));
        }
        if (self.provenance == Provenance::DomainAdapted) != self.domain.is_some() {
            return Err(Error::InvalidInput(
                "a domain is required exactly when provenance is domain_adapted".into(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.domain {
            Some(domain) => format!("{}/{}", self.family.as_str(), domain),
            None => self.family.as_str().to_string(),
        }
    }
}

/// Probabilities over vocabulary items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub entries: BTreeMap<String, f64>,
    /// True when `entries` is a restriction of the full distribution and so
    /// does not sum to one.
    pub restricted: bool,
}

impl TokenDistribution {
    pub fn get(&self, word: &str) -> Option<f64> {
        self.entries.get(word).copied()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// Unnormalised NLI scores for one premise/hypothesis pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliLogits {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

impl NliLogits {
    pub fn is_finite(&self) -> bool {
        self.entail.is_finite() && self.neutral.is_finite() && self.contradict.is_finite()
    }

    /// Softmax over (entail, neutral, contradict).
    pub fn probabilities(&self) -> [f64; 3] {
        softmax(&[self.entail, self.neutral, self.contradict])
            .try_into()
            .expect("three entries")
    }
}

/// Three-way pair-classification scores in [`Polarity::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLogits {
    pub scores: [f64; 3],
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LabelWordCrossEntropy,
    ThreeWayCrossEntropy,
    MaskedLm,
    CausalLm,
}

/// One supervised input together with its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainingInstance {
    /// Cross-entropy of the gold label word over the three label words at the
    /// mask slot (cloze) or at the next position (next-word).
    LabelWord {
        text: String,
        mode: PromptMode,
        label_words: [String; 3],
        target: usize,
    },
    /// Cross-entropy over softmax(entail(H+), entail(H-), mean neutral) logits.
    Entailment {
        premise: String,
        positive_hypothesis: String,
        negative_hypothesis: String,
        target: Polarity,
    },
    /// Cross-entropy over the three pair-classification logits.
    Pair {
        text: String,
        aspect: String,
        target: Polarity,
    },
    /// Token-level objective over backend ids; `None` labels are ignored.
    MaskedLm {
        input_ids: Vec<u32>,
        labels: Vec<Option<u32>>,
    },
    CausalLm {
        input_ids: Vec<u32>,
        labels: Vec<Option<u32>>,
    },
}

impl TrainingInstance {
    pub fn loss_kind(&self) -> LossKind {
        match self {
            TrainingInstance::LabelWord { .. } => LossKind::LabelWordCrossEntropy,
            TrainingInstance::Entailment { .. } | TrainingInstance::Pair { .. } => {
                LossKind::ThreeWayCrossEntropy
            }
            TrainingInstance::MaskedLm { .. } => LossKind::MaskedLm,
            TrainingInstance::CausalLm { .. } => LossKind::CausalLm,
        }
    }
}

/// Optimisation settings. Batch size, learning rate and weight decay are
/// artifact defaults; only the epoch count follows the reference protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Seeds the data order (and any fresh-parameter initialisation).
    pub seed: u64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Decay the learning rate linearly to zero over the planned steps.
    pub linear_decay: bool,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            epochs: 20,
            batch_size: 4,
            learning_rate: 2e-5,
            weight_decay: 0.01,
            seed: 0,
            max_steps: None,
            linear_decay: true,
            max_grad_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl FitReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn min_loss(&self) -> Option<f64> {
        self.epoch_losses.iter().copied().reduce(f64::min)
    }
}

/// A sub-word unit with its byte span in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

/// Tokenizer access needed to build pretraining instances.
pub trait Vocabulary {
    /// Pieces of `text` without special tokens.
    fn encode(&self, text: &str) -> Result<Vec<Piece>>;
    fn mask_id(&self) -> Option<u32>;
    fn pad_id(&self) -> u32;
    /// Separator appended between packed sentences for causal LMs.
    fn eos_id(&self) -> Option<u32>;
    /// Longest sequence the backend accepts, special tokens included.
    fn max_len(&self) -> usize;
    fn size(&self) -> usize;
}

/// A pretrained model behind the five scoring/training capabilities.
///
/// Capabilities a family does not have return [`Error::Unsupported`].
pub trait Backend: Send {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Distribution at the single `[MASK]` slot of `text`.
    fn mask_fill(&self, text: &str, candidates: Option<&[&str]>) -> Result<TokenDistribution> {
        let _ = (text, candidates);
        Err(self.unsupported("mask_fill"))
    }

    /// Distribution of the item following `prefix`.
    fn next_token(&self, prefix: &str, candidates: Option<&[&str]>) -> Result<TokenDistribution> {
        let _ = (prefix, candidates);
        Err(self.unsupported("next_token"))
    }

    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliLogits> {
        let _ = (premise, hypothesis);
        Err(self.unsupported("nli_score"))
    }

    fn pair_classify(&self, text: &str, aspect: &str) -> Result<PairLogits> {
        let _ = (text, aspect);
        Err(self.unsupported("pair_classify"))
    }

    /// Updates every parameter on `instances`; returns per-epoch losses.
    fn fit(&mut self, instances: &[TrainingInstance], schedule: &TrainingSchedule) -> Result<FitReport>;

    /// Whether `fit` has been called with at least one instance.
    fn is_fitted(&self) -> bool;

    fn vocabulary(&self) -> Option<&dyn Vocabulary> {
        None
    }

    /// Whether scoring calls may run concurrently on shared references.
    fn shareable(&self) -> bool {
        false
    }

    /// Persists the current parameters in the format the factory loads.
    fn save(&self, dir: &std::path::Path) -> Result<()> {
        let _ = dir;
        Err(self.unsupported("save"))
    }

    fn unsupported(&self, capability: &'static str) -> Error {
        Error::Unsupported {
            backend: self.descriptor().label(),
            capability,
        }
    }
}

/// Readout used by pair-classifier backends for the two no-prompt baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairReadout {
    /// Final hidden state at the first position.
    Cls,
    /// Pooled state of the next-sentence-prediction head.
    Nsp,
}

/// A registered model location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEntry {
    #[serde(flatten)]
    pub descriptor: BackendDescriptor,
    pub path: PathBuf,
    /// Free-form backend options (label order, length budget, ...).
    #[serde(default)]
    pub options: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    pub seed: u64,
    pub readout: Option<PairReadout>,
}

/// Builds backends from registry entries.
pub trait BackendFactory: Send + Sync {
    fn load(&self, entry: &BackendEntry, options: LoadOptions) -> Result<Box<dyn Backend>>;
}

/// Backends keyed by (family, provenance, domain).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BackendRegistry {
    pub entries: Vec<BackendEntry>,
}

impl BackendRegistry {
    pub fn register(&mut self, entry: BackendEntry) -> Result<()> {
        entry.descriptor.validate()?;
        self.entries.retain(|e| e.descriptor != entry.descriptor);
        self.entries.push(entry);
        Ok(())
    }

    pub fn find(&self, descriptor: &BackendDescriptor) -> Result<&BackendEntry> {
        self.entries
            .iter()
            .find(|e| &e.descriptor == descriptor)
            .ok_or_else(|| Error::NoBackend(descriptor.label()))
    }

    /// Domain-adapted backend for `domain` when one is registered, else the generic one.
    pub fn resolve(&self, family: BackendFamily, provenance: Provenance, domain: Domain) -> Result<&BackendEntry> {
        match provenance {
            Provenance::DomainAdapted => self.find(&BackendDescriptor::domain_adapted(family, domain)),
            Provenance::Generic => self.find(&BackendDescriptor::generic(family)),
        }
    }
}
