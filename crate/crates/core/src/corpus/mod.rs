//! Benchmark ingestion, preprocessing, few-shot sampling and pretraining text.

mod records;
mod reviews;
mod sampling;
mod semeval;
mod sentences;

use serde::{Deserialize, Serialize};

use crate::label::{AspectKind, Domain, Polarity, RawPolarity};

pub use records::{read_examples, write_examples};
pub use reviews::{prepare_pretrain_corpus, PretrainSentence, PretrainStream, ReviewRecord};
pub use sampling::{sample_few_shot, shuffled_indices, FewShotSpec, ShotCount, STANDARD_SHOT_SIZES};
pub use semeval::{parse_semeval, preprocess};
pub use sentences::split_sentences;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAspect {
    pub surface: String,
    pub polarity: RawPolarity,
    /// `[from, to)` in characters; categories never carry one.
    pub char_span: Option<(usize, usize)>,
}

/// One annotated sentence as it appears in the benchmark file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub sentence_id: String,
    pub text: String,
    pub aspects: Vec<RawAspect>,
    pub aspect_kind: AspectKind,
}

/// A single (review, aspect, polarity) data point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub aspect: String,
    pub polarity: Polarity,
    pub domain: Domain,
    pub aspect_kind: AspectKind,
    pub source_id: String,
}

impl LabeledExample {
    pub fn with_aspect(&self, aspect: impl Into<String>) -> LabeledExample {
        LabeledExample {
            aspect: aspect.into(),
            ..self.clone()
        }
    }
}

/// Per-class counts of a list of examples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
}

impl ClassCounts {
    pub fn of(examples: &[LabeledExample]) -> ClassCounts {
        let mut counts = ClassCounts::default();
        for example in examples {
            match example.polarity {
                Polarity::Positive => counts.positive += 1,
                Polarity::Negative => counts.negative += 1,
                Polarity::Neutral => counts.neutral += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.positive + self.negative + self.neutral
    }
}
