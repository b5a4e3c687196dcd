//! Turning backend scores into class distributions, and the matching losses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{
    softmax, Backend, BackendFamily, NliLogits, PairLogits, PairReadout, TrainingInstance,
};
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::label::Polarity;
use crate::prompting::{render, render_hypotheses, PromptMode, PromptTemplate, Verbalizer};

const SUM_TOLERANCE: f64 = 1e-6;

/// Probabilities over {positive, negative, neutral}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
}

impl ClassDistribution {
    /// Normalises non-negative scores given in [`Polarity::ALL`] order.
    pub fn from_scores(scores: [f64; 3]) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("class scores {scores:?}")));
        }
        if scores.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidInput(format!("negative class scores {scores:?}")));
        }
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all class scores are zero".into()));
        }
        Ok(Self::from_array(scores.map(|s| s / total)))
    }

    pub fn from_logits(logits: [f64; 3]) -> Result<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("class logits {logits:?}")));
        }
        let p = softmax(&logits);
        Ok(Self::from_array([p[0], p[1], p[2]]))
    }

    fn from_array(p: [f64; 3]) -> Self {
        ClassDistribution {
            positive: p[0],
            negative: p[1],
            neutral: p[2],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.positive, self.negative, self.neutral]
    }

    pub fn probability(&self, polarity: Polarity) -> f64 {
        self.as_array()[polarity.index()]
    }

    /// Most probable class; ties resolve positive, then negative, then neutral.
    pub fn argmax(&self) -> Polarity {
        let p = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        Polarity::ALL[best]
    }

    pub fn is_normalized(&self) -> bool {
        let p = self.as_array();
        p.iter().all(|x| (0.0..=1.0).contains(x)) && (p.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    LmCloze,
    LmNextWord,
    Nli,
    BaselineCls,
    BaselineNsp,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [
        HeadKind::BaselineCls,
        HeadKind::BaselineNsp,
        HeadKind::LmCloze,
        HeadKind::LmNextWord,
        HeadKind::Nli,
    ];

    pub fn family(self) -> BackendFamily {
        match self {
            HeadKind::LmCloze => BackendFamily::MaskedLm,
            HeadKind::LmNextWord => BackendFamily::CausalLm,
            HeadKind::Nli => BackendFamily::Nli,
            HeadKind::BaselineCls | HeadKind::BaselineNsp => BackendFamily::PairClassifier,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, HeadKind::BaselineCls | HeadKind::BaselineNsp)
    }

    pub fn uses_template(self) -> bool {
        !self.is_baseline()
    }

    pub fn readout(self) -> Option<PairReadout> {
        match self {
            HeadKind::BaselineCls => Some(PairReadout::Cls),
            HeadKind::BaselineNsp => Some(PairReadout::Nsp),
            _ => None,
        }
    }

    pub fn prompt_mode(self) -> Option<PromptMode> {
        match self {
            HeadKind::LmCloze => Some(PromptMode::Cloze),
            HeadKind::LmNextWord => Some(PromptMode::NextWord),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::LmCloze => "lm_cloze",
            HeadKind::LmNextWord => "lm_next_word",
            HeadKind::Nli => "nli",
            HeadKind::BaselineCls => "baseline_cls",
            HeadKind::BaselineNsp => "baseline_nsp",
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            HeadKind::LmCloze => "BERT LM",
            HeadKind::LmNextWord => "GPT-2 LM",
            HeadKind::Nli => "BERT NLI",
            HeadKind::BaselineCls => "BERT [CLS]",
            HeadKind::BaselineNsp => "BERT NSP",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown head `{s}`")))
    }
}

/// How per-hypothesis NLI scores become class scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliScoring {
    /// Entailment/neutral probabilities, renormalised by their sum.
    #[default]
    ProbabilityArgmax,
    /// Entailment/neutral logits, then a softmax. Used for the training loss.
    LogitSoftmax,
}

fn check_family(backend: &dyn Backend, family: BackendFamily) -> Result<()> {
    let actual = backend.descriptor().family;
    if actual != family {
        return Err(Error::InvalidInput(format!(
            "head needs a {} backend, got {}",
            family.as_str(),
            actual.as_str()
        )));
    }
    Ok(())
}

/// Label-word probabilities at the prompt slot, in [`Polarity::ALL`] order.
pub fn label_word_probabilities(
    example: &LabeledExample,
    template: &PromptTemplate,
    verbalizer: &Verbalizer,
    backend: &dyn Backend,
    mode: PromptMode,
) -> Result<[f64; 3]> {
    let family = match mode {
        PromptMode::Cloze => BackendFamily::MaskedLm,
        PromptMode::NextWord => BackendFamily::CausalLm,
    };
    check_family(backend, family)?;
    let prompt = render(template, &example.aspect, &example.text, mode)?;
    let words = verbalizer.words();
    let dist = match mode {
        PromptMode::Cloze => backend.mask_fill(&prompt.full_text, Some(&words))?,
        PromptMode::NextWord => backend.next_token(&prompt.full_text, Some(&words))?,
    };
    let mut probs = [0.0; 3];
    for (slot, word) in probs.iter_mut().zip(words) {
        *slot = dist
            .get(word)
            .ok_or_else(|| Error::Backend(format!("backend returned no score for `{word}`")))?;
    }
    Ok(probs)
}

/// p(class) ∝ p(label word); all other vocabulary items are ignored.
pub fn lm_predict(
    example: &LabeledExample,
    template: &PromptTemplate,
    verbalizer: &Verbalizer,
    backend: &dyn Backend,
    mode: PromptMode,
) -> Result<ClassDistribution> {
    let probs = label_word_probabilities(example, template, verbalizer, backend, mode)?;
    ClassDistribution::from_scores(probs)
}

/// Entailment logits for the positive and negative hypotheses of `example`.
pub fn hypothesis_logits(
    example: &LabeledExample,
    template: &PromptTemplate,
    backend: &dyn Backend,
) -> Result<(NliLogits, NliLogits)> {
    check_family(backend, BackendFamily::Nli)?;
    let pair = render_hypotheses(template, &example.aspect)?;
    let positive = backend.nli_score(&example.text, &pair.positive_hypothesis)?;
    let negative = backend.nli_score(&example.text, &pair.negative_hypothesis)?;
    for logits in [&positive, &negative] {
        if !logits.is_finite() {
            return Err(Error::NonFinite(format!("NLI logits {logits:?}")));
        }
    }
    Ok((positive, negative))
}

/// Class scores from per-hypothesis (entail, neutral, contradict) probabilities:
/// positive = entail(H+), negative = entail(H-), neutral = mean neutral.
pub fn combine_nli_probabilities(positive: [f64; 3], negative: [f64; 3]) -> Result<ClassDistribution> {
    let neutral = (positive[1] + negative[1]) / 2.0;
    ClassDistribution::from_scores([positive[0], negative[0], neutral])
}

pub fn combine_nli(positive: &NliLogits, negative: &NliLogits, scoring: NliScoring) -> Result<ClassDistribution> {
    match scoring {
        NliScoring::ProbabilityArgmax => {
            combine_nli_probabilities(positive.probabilities(), negative.probabilities())
        }
        NliScoring::LogitSoftmax => ClassDistribution::from_logits([
            positive.entail,
            negative.entail,
            (positive.neutral + negative.neutral) / 2.0,
        ]),
    }
}

pub fn nli_predict(
    example: &LabeledExample,
    template: &PromptTemplate,
    backend: &dyn Backend,
    scoring: NliScoring,
) -> Result<ClassDistribution> {
    let (positive, negative) = hypothesis_logits(example, template, backend)?;
    combine_nli(&positive, &negative, scoring)
}

/// Softmax of the pair-classifier logits. Undefined before any training.
pub fn baseline_predict(example: &LabeledExample, backend: &dyn Backend, kind: HeadKind) -> Result<ClassDistribution> {
    if !kind.is_baseline() {
        return Err(Error::InvalidInput(format!("{kind} is not a baseline head")));
    }
    check_family(backend, BackendFamily::PairClassifier)?;
    if !backend.is_fitted() {
        return Err(Error::BaselineUntrained);
    }
    let logits = backend.pair_classify(&example.text, &example.aspect)?;
    ClassDistribution::from_logits(logits.scores)
}

/// Everything a head needs besides the backend.
#[derive(Debug, Clone)]
pub struct HeadSetup<'a> {
    pub kind: HeadKind,
    pub template: Option<&'a PromptTemplate>,
    pub verbalizer: &'a Verbalizer,
    pub scoring: NliScoring,
}

impl HeadSetup<'_> {
    fn template(&self) -> Result<&PromptTemplate> {
        self.template
            .ok_or_else(|| Error::InvalidInput(format!("{} needs a prompt template", self.kind)))
    }

    pub fn predict(&self, example: &LabeledExample, backend: &dyn Backend) -> Result<ClassDistribution> {
        match self.kind {
            HeadKind::LmCloze | HeadKind::LmNextWord => lm_predict(
                example,
                self.template()?,
                self.verbalizer,
                backend,
                self.kind.prompt_mode().expect("lm head"),
            ),
            HeadKind::Nli => nli_predict(example, self.template()?, backend, self.scoring),
            HeadKind::BaselineCls | HeadKind::BaselineNsp => baseline_predict(example, backend, self.kind),
        }
    }

    /// The supervised instance `fit` consumes for `example`.
    pub fn training_instance(&self, example: &LabeledExample) -> Result<TrainingInstance> {
        match self.kind {
            HeadKind::LmCloze | HeadKind::LmNextWord => {
                let mode = self.kind.prompt_mode().expect("lm head");
                let prompt = render(self.template()?, &example.aspect, &example.text, mode)?;
                Ok(TrainingInstance::LabelWord {
                    text: prompt.full_text,
                    mode,
                    label_words: self.verbalizer.words().map(str::to_string),
                    target: example.polarity.index(),
                })
            }
            HeadKind::Nli => {
                let pair = render_hypotheses(self.template()?, &example.aspect)?;
                Ok(TrainingInstance::Entailment {
                    premise: example.text.clone(),
                    positive_hypothesis: pair.positive_hypothesis,
                    negative_hypothesis: pair.negative_hypothesis,
                    target: example.polarity,
                })
            }
            HeadKind::BaselineCls | HeadKind::BaselineNsp => Ok(TrainingInstance::Pair {
                text: example.text.clone(),
                aspect: example.aspect.clone(),
                target: example.polarity,
            }),
        }
    }
}

/// Backend outputs a loss is computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionContext {
    /// Unnormalised label-word probabilities in [`Polarity::ALL`] order.
    LabelWords([f64; 3]),
    Entailment { positive: NliLogits, negative: NliLogits },
    Pair(PairLogits),
}

/// Cross-entropy of the gold class under the head's training distribution.
pub fn training_loss(head: HeadKind, gold: Polarity, context: &PredictionContext) -> Result<f64> {
    let distribution = match (head, context) {
        (HeadKind::LmCloze | HeadKind::LmNextWord, PredictionContext::LabelWords(p)) => {
            ClassDistribution::from_scores(*p)?
        }
        (HeadKind::Nli, PredictionContext::Entailment { positive, negative }) => {
            combine_nli(positive, negative, NliScoring::LogitSoftmax)?
        }
        (HeadKind::BaselineCls | HeadKind::BaselineNsp, PredictionContext::Pair(logits)) => {
            ClassDistribution::from_logits(logits.scores)?
        }
        (head, context) => {
            return Err(Error::InvalidInput(format!(
                "{head} loss cannot be computed from {context:?}"
            )))
        }
    };
    let loss = -distribution.probability(gold).ln();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("{head} loss for {gold}")));
    }
    Ok(loss)
}

/// One scored test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source_id: String,
    pub gold: Polarity,
    pub distribution: ClassDistribution,
    pub predicted: Polarity,
}
