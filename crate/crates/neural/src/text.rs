//! Tokenizer wrapper: special tokens, pair layout and truncation policy.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use atsc_core::backend::{Piece, Vocabulary};
use atsc_core::prompting::MASK;
use atsc_core::{Error, Result};
use tokenizers::models::wordlevel::WordLevel;
use tokenizers::models::wordpiece::WordPiece;
use tokenizers::normalizers::BertNormalizer;
use tokenizers::pre_tokenizers::bert::BertPreTokenizer;
use tokenizers::{AddedToken, Tokenizer};
use tracing::warn;

use crate::hf_config::{Arch, ModelConfig};

pub const BERT_SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const GPT2_EOS: &str = "<|endoftext|>";

fn tok_err(e: impl std::fmt::Display) -> Error {
    Error::Backend(format!("tokenizer: {e}"))
}

pub struct TextCodec {
    tokenizer: Tokenizer,
    arch: Arch,
    cls: Option<u32>,
    sep: Option<u32>,
    pad: u32,
    mask: Option<(String, u32)>,
    eos: Option<u32>,
    max_len: usize,
    warned: Mutex<Vec<String>>,
}

/// Lower-casing WordPiece tokenizer built from a `vocab.txt`.
fn wordpiece_from_vocab(path: &Path, lowercase: bool) -> Result<Tokenizer> {
    let model = WordPiece::from_file(&path.display().to_string())
        .unk_token("[UNK]".into())
        .build()
        .map_err(tok_err)?;
    let mut tokenizer = Tokenizer::new(model);
    tokenizer
        .with_normalizer(Some(BertNormalizer::new(true, true, None, lowercase)))
        .map_err(tok_err)?;
    tokenizer.with_pre_tokenizer(Some(BertPreTokenizer));
    tokenizer
        .add_special_tokens(BERT_SPECIALS.iter().map(|t| AddedToken::from(*t, true)))
        .map_err(tok_err)?;
    Ok(tokenizer)
}

/// Whole-word tokenizer over a fixed word list, used by scratch models.
pub fn word_level_tokenizer(words: &[String], specials: &[&str]) -> Result<Tokenizer> {
    let mut vocab = HashMap::new();
    for w in specials.iter().map(|s| s.to_string()).chain(words.iter().cloned()) {
        let next = vocab.len() as u32;
        vocab.entry(w).or_insert(next);
    }
    let model = WordLevel::builder()
        .vocab(vocab.into_iter().collect())
        .unk_token("[UNK]".into())
        .build()
        .map_err(tok_err)?;
    let mut tokenizer = Tokenizer::new(model);
    tokenizer
        .with_normalizer(Some(BertNormalizer::new(true, true, None, true)))
        .map_err(tok_err)?;
    tokenizer.with_pre_tokenizer(Some(BertPreTokenizer));
    tokenizer
        .add_special_tokens(specials.iter().map(|t| AddedToken::from(*t, true)))
        .map_err(tok_err)?;
    Ok(tokenizer)
}

fn lowercase_setting(dir: &Path) -> bool {
    std::fs::read_to_string(dir.join("tokenizer_config.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("do_lower_case").and_then(|b| b.as_bool()))
        .unwrap_or(true)
}

impl TextCodec {
    /// Reads `tokenizer.json`, falling back to `vocab.txt` for BERT checkpoints.
    pub fn load(dir: &Path, config: &ModelConfig, max_len: Option<usize>) -> Result<Self> {
        let json = dir.join("tokenizer.json");
        let tokenizer = if json.is_file() {
            Tokenizer::from_file(&json).map_err(tok_err)?
        } else if config.arch == Arch::Bert && dir.join("vocab.txt").is_file() {
            wordpiece_from_vocab(&dir.join("vocab.txt"), lowercase_setting(dir))?
        } else {
            return Err(Error::Backend(format!("{} has no tokenizer.json", dir.display())));
        };
        Self::new(tokenizer, config, max_len)
    }

    pub fn new(tokenizer: Tokenizer, config: &ModelConfig, max_len: Option<usize>) -> Result<Self> {
        let id = |t: &str| tokenizer.token_to_id(t);
        let (cls, sep, pad, mask, eos) = match config.arch {
            Arch::Bert => (id("[CLS]"), id("[SEP]"), id("[PAD]"), Some("[MASK]"), None),
            Arch::Roberta => (id("<s>"), id("</s>"), id("<pad>"), Some("<mask>"), None),
            Arch::Gpt2 => {
                let eos = id(GPT2_EOS);
                (None, None, id("[PAD]").or(eos), None, eos)
            }
        };
        if config.arch != Arch::Gpt2 && (cls.is_none() || sep.is_none()) {
            return Err(Error::Backend("tokenizer lacks its classification/separator tokens".into()));
        }
        let mask = mask.and_then(|m| id(m).map(|i| (m.to_string(), i)));
        let budget = config.usable_positions();
        Ok(TextCodec {
            arch: config.arch,
            cls,
            sep,
            pad: pad.unwrap_or(config.pad_token_id),
            mask,
            eos,
            max_len: max_len.unwrap_or(budget).min(budget),
            warned: Mutex::new(Vec::new()),
            tokenizer,
        })
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn ids(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.tokenizer.encode(text, false).map_err(tok_err)?.get_ids().to_vec())
    }

    /// Replaces the generic mask placeholder with this tokenizer's mask token.
    pub fn with_mask_token(&self, text: &str) -> Result<String> {
        let count = text.matches(MASK).count();
        if count != 1 {
            return Err(Error::MaskCount(count));
        }
        let (token, _) = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::Backend("tokenizer has no mask token".into()))?;
        Ok(text.replace(MASK, token))
    }

    pub fn mask_id(&self) -> Option<u32> {
        self.mask.as_ref().map(|(_, id)| *id)
    }

    pub fn pad(&self) -> u32 {
        self.pad
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    /// `[CLS] ids [SEP]`, dropping ids from the left to fit.
    pub fn wrap_single(&self, ids: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let budget = self.max_len.saturating_sub(2);
        let ids = &ids[ids.len().saturating_sub(budget)..];
        let mut out = Vec::with_capacity(ids.len() + 2);
        out.push(self.cls.expect("encoder tokenizer"));
        out.extend_from_slice(ids);
        out.push(self.sep.expect("encoder tokenizer"));
        let types = vec![0; out.len()];
        (out, types)
    }

    /// Two-segment input. The first segment loses tokens from its left;
    /// the second stays whole unless it alone exceeds the budget.
    pub fn wrap_pair(&self, first: &[u32], second: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let (cls, sep) = (self.cls.expect("encoder tokenizer"), self.sep.expect("encoder tokenizer"));
        let specials = if self.arch == Arch::Roberta { 4 } else { 3 };
        let budget = self.max_len.saturating_sub(specials);
        let second = &second[..second.len().min(budget)];
        let keep = budget - second.len();
        let first = &first[first.len().saturating_sub(keep)..];
        let mut ids = vec![cls];
        ids.extend_from_slice(first);
        ids.push(sep);
        if self.arch == Arch::Roberta {
            ids.push(sep);
        }
        let split = ids.len();
        ids.extend_from_slice(second);
        ids.push(sep);
        let types = match self.arch {
            Arch::Bert => (0..ids.len()).map(|i| u32::from(i >= split)).collect(),
            _ => vec![0; ids.len()],
        };
        (ids, types)
    }

    /// Trailing context for a causal LM, dropping tokens from the left.
    pub fn causal_prefix(&self, text: &str) -> Result<Vec<u32>> {
        let ids = self.ids(text)?;
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty prefix".into()));
        }
        Ok(ids[ids.len().saturating_sub(self.max_len)..].to_vec())
    }

    /// Vocabulary id of a label word. Byte-level vocabularies see it after a
    /// space; a word that splits into several pieces is scored by its first.
    pub fn label_id(&self, word: &str) -> Result<u32> {
        let text = match self.arch {
            Arch::Bert => word.to_string(),
            Arch::Roberta | Arch::Gpt2 => format!(" {word}"),
        };
        let ids = self.ids(&text)?;
        let first = *ids
            .first()
            .ok_or_else(|| Error::Backend(format!("label word `{word}` encodes to nothing")))?;
        if ids.len() > 1 {
            let mut warned = self.warned.lock().expect("warn lock");
            if !warned.iter().any(|w| w == word) {
                warn!(word, pieces = ids.len(), "label word is not a single vocabulary item; scoring its first piece");
                warned.push(word.to_string());
            }
        }
        Ok(first)
    }

    pub fn token(&self, id: u32) -> Option<String> {
        self.tokenizer.id_to_token(id)
    }
}

impl Vocabulary for TextCodec {
    fn encode(&self, text: &str) -> Result<Vec<Piece>> {
        let encoding = self.tokenizer.encode(text, false).map_err(tok_err)?;
        Ok(encoding
            .get_ids()
            .iter()
            .zip(encoding.get_offsets())
            .map(|(&id, &(start, end))| Piece { id, start, end })
            .collect())
    }

    fn mask_id(&self) -> Option<u32> {
        TextCodec::mask_id(self)
    }

    fn pad_id(&self) -> u32 {
        self.pad
    }

    fn eos_id(&self) -> Option<u32> {
        self.eos
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn size(&self) -> usize {
        self.tokenizer.get_vocab_size(true)
    }
}
