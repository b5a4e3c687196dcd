//! Domain-adaptive pretraining data: POS-restricted whole-word masking for
//! masked LMs and packed windows for causal LMs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Piece, TrainingInstance, Vocabulary};
use crate::corpus::shuffled_indices;
use crate::error::{Error, Result};
use crate::pos::{PosTag, PosTagger, TaggedSentence};

pub const DEFAULT_MASK_RATE: f64 = 0.15;

pub fn is_candidate_tag(tag: PosTag) -> bool {
    matches!(tag, PosTag::Adj | PosTag::Noun | PosTag::Propn)
}

/// An adjective/noun/proper noun and the sub-word pieces that cover it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateWord {
    pub word: usize,
    pub pieces: Vec<usize>,
}

/// Maps tagged words onto backend pieces and keeps the maskable ones.
///
/// Every word span must lie on character boundaries of the text, and every
/// candidate word must be covered by pieces that do not extend past it.
pub fn select_candidates(sentence: &TaggedSentence, pieces: &[Piece]) -> Result<Vec<CandidateWord>> {
    let text = &sentence.text;
    let mut out = Vec::new();
    for (index, word) in sentence.words.iter().enumerate() {
        let misaligned = |message: String| Error::Alignment {
            start: word.start,
            end: word.end,
            message,
        };
        if word.start >= word.end
            || word.end > text.len()
            || !text.is_char_boundary(word.start)
            || !text.is_char_boundary(word.end)
        {
            return Err(misaligned(format!("not a span of a {}-byte sentence", text.len())));
        }
        if !is_candidate_tag(word.tag) {
            continue;
        }
        let covering: Vec<usize> = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| p.start < word.end && p.end > word.start)
            .map(|(i, _)| i)
            .collect();
        if covering.is_empty() {
            return Err(misaligned(format!("no piece covers `{}`", &text[word.start..word.end])));
        }
        if let Some(&i) = covering
            .iter()
            .find(|&&i| pieces[i].start < word.start || pieces[i].end > word.end)
        {
            return Err(misaligned(format!(
                "piece {}..{} crosses the boundary of `{}`",
                pieces[i].start,
                pieces[i].end,
                &text[word.start..word.end]
            )));
        }
        out.push(CandidateWord {
            word: index,
            pieces: covering,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub candidates: Vec<CandidateWord>,
    /// Indices into `candidates`, ascending.
    pub masked_words: Vec<usize>,
    /// Piece positions replaced by the mask token, ascending.
    pub masked_positions: Vec<usize>,
    pub mask_rate: f64,
}

/// Number of candidate words masked at `rate`: `floor(rate * n)`, at least one
/// when any candidate exists.
pub fn masked_word_count(candidates: usize, rate: f64) -> usize {
    if candidates == 0 {
        return 0;
    }
    let n = (rate.clamp(0.0, 1.0) * candidates as f64).floor() as usize;
    n.clamp(1, candidates)
}

/// Chooses whole candidate words to mask, deterministically in `seed`.
pub fn apply_masking(candidates: Vec<CandidateWord>, rate: f64, seed: u64) -> MaskingPlan {
    let count = masked_word_count(candidates.len(), rate);
    let mut masked_words: Vec<usize> = shuffled_indices(candidates.len(), seed)
        .into_iter()
        .take(count)
        .collect();
    masked_words.sort_unstable();
    let mut masked_positions: Vec<usize> = masked_words
        .iter()
        .flat_map(|&w| candidates[w].pieces.iter().copied())
        .collect();
    masked_positions.sort_unstable();
    masked_positions.dedup();
    MaskingPlan {
        candidates,
        masked_words,
        masked_positions,
        mask_rate: rate,
    }
}

/// Masked inputs and targets; positions outside the plan carry no target.
/// An empty plan yields an instance with no targets, which contributes no loss.
pub fn masked_instance(piece_ids: &[u32], plan: &MaskingPlan, mask_id: u32) -> TrainingInstance {
    let mut input_ids = piece_ids.to_vec();
    let mut labels = vec![None; piece_ids.len()];
    for &pos in &plan.masked_positions {
        labels[pos] = Some(piece_ids[pos]);
        input_ids[pos] = mask_id;
    }
    TrainingInstance::MaskedLm { input_ids, labels }
}

/// splitmix64 step, used to derive independent per-item seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskingStats {
    pub sentences: usize,
    pub candidate_words: usize,
    pub masked_words: usize,
    pub unmasked_sentences: usize,
    pub misaligned_sentences: usize,
}

/// What a selected position turns into in the model input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Always the mask token.
    #[default]
    MaskOnly,
    /// 80% mask token, 10% random token, 10% unchanged.
    MaskRandomKeep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingOptions {
    pub rate: f64,
    #[serde(default)]
    pub corruption: Corruption,
    pub seed: u64,
}

impl Default for MaskingOptions {
    fn default() -> Self {
        MaskingOptions {
            rate: DEFAULT_MASK_RATE,
            corruption: Corruption::MaskOnly,
            seed: 0,
        }
    }
}

/// Re-draws masked inputs under [`Corruption::MaskRandomKeep`]. Targets are untouched.
pub fn corrupt(instance: &mut TrainingInstance, vocab_size: usize, seed: u64) {
    let TrainingInstance::MaskedLm { input_ids, labels } = instance else {
        return;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (input, label) in input_ids.iter_mut().zip(labels.iter()) {
        let Some(original) = label else { continue };
        let roll: f64 = rng.random();
        if roll >= 0.9 {
            *input = *original;
        } else if roll >= 0.8 {
            *input = rng.random_range(0..vocab_size as u32);
        }
    }
}

/// Tags, aligns and masks each sentence. Sentences whose tags cannot be
/// aligned are counted and skipped.
pub fn masked_lm_instances(
    sentences: &[String],
    tagger: &dyn PosTagger,
    vocabulary: &dyn Vocabulary,
    options: &MaskingOptions,
) -> Result<(Vec<TrainingInstance>, MaskingStats)> {
    let mask_id = vocabulary
        .mask_id()
        .ok_or_else(|| Error::InvalidInput("backend has no mask token".into()))?;
    let budget = vocabulary.max_len().saturating_sub(2);
    let mut stats = MaskingStats::default();
    let mut instances = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let tagged = tagger.tag(sentence);
        let mut pieces = vocabulary.encode(sentence)?;
        pieces.truncate(budget);
        let candidates = match select_candidates(&tagged, &pieces) {
            Ok(c) => c,
            Err(Error::Alignment { .. }) => {
                stats.misaligned_sentences += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let sentence_seed = derive_seed(options.seed, i as u64);
        let plan = apply_masking(candidates, options.rate, sentence_seed);
        stats.sentences += 1;
        stats.candidate_words += plan.candidates.len();
        stats.masked_words += plan.masked_words.len();
        if plan.masked_positions.is_empty() {
            stats.unmasked_sentences += 1;
        }
        let ids: Vec<u32> = pieces.iter().map(|p| p.id).collect();
        let mut instance = masked_instance(&ids, &plan, mask_id);
        if options.corruption == Corruption::MaskRandomKeep {
            corrupt(&mut instance, vocabulary.size(), derive_seed(sentence_seed, u64::MAX));
        }
        instances.push(instance);
    }
    Ok((instances, stats))
}

/// Packs token sequences into contiguous `window`-long causal-LM instances.
///
/// Sequences are joined (with `eos` after each, when given); every input
/// position's label is the next token of the stream. The final window is
/// padded with `pad` and padded positions carry no label. Window order is
/// shuffled by `seed`.
pub fn clm_batches(
    sequences: &[Vec<u32>],
    window: usize,
    eos: Option<u32>,
    pad: u32,
    seed: u64,
) -> Result<Vec<TrainingInstance>> {
    if window == 0 {
        return Err(Error::InvalidInput("window must be positive".into()));
    }
    let mut stream = Vec::new();
    for seq in sequences {
        stream.extend_from_slice(seq);
        if let Some(eos) = eos {
            stream.push(eos);
        }
    }
    let mut windows = Vec::new();
    for start in (0..stream.len()).step_by(window) {
        let end = (start + window).min(stream.len());
        let mut input_ids = stream[start..end].to_vec();
        let mut labels: Vec<Option<u32>> = (start..end).map(|i| stream.get(i + 1).copied()).collect();
        input_ids.resize(window, pad);
        labels.resize(window, None);
        windows.push(TrainingInstance::CausalLm { input_ids, labels });
    }
    let order = shuffled_indices(windows.len(), seed);
    let mut slots: Vec<Option<TrainingInstance>> = windows.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().expect("permutation"))
        .collect())
}
