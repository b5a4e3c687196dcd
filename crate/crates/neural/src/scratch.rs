//! Small randomly initialised checkpoints with a whole-word vocabulary.
//!
//! They share the on-disk layout of downloaded models, so every code path
//! can be exercised without network access.

use std::collections::BTreeSet;
use std::path::Path;

use atsc_core::backend::{Backend, BackendDescriptor, BackendFamily, PairReadout};
use atsc_core::{Error, Result};
use candle_core::Device;
use serde_json::json;

use crate::backend::{Network, NeuralBackend};
use crate::hf_config::HfConfig;
use crate::nn::Params;
use crate::text::{word_level_tokenizer, TextCodec, BERT_SPECIALS, GPT2_EOS};
use crate::weights::initialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ScratchSpec {
    /// Which checkpoint to produce; decides architecture and head.
    pub family: BackendFamily,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    /// Hidden and attention dropout probability.
    pub dropout: f64,
    pub seed: u64,
}

impl ScratchSpec {
    pub fn tiny(family: BackendFamily, seed: u64) -> Self {
        ScratchSpec {
            family,
            hidden: 32,
            layers: 2,
            heads: 2,
            intermediate: 64,
            max_positions: 128,
            dropout: 0.1,
            seed,
        }
    }
}

/// Lower-cased words and punctuation marks of `texts`, sorted and unique.
pub fn vocabulary_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut words = BTreeSet::new();
    for text in texts {
        let mut word = String::new();
        for c in text.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                word.push(c);
                continue;
            }
            if !word.is_empty() {
                words.insert(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                words.insert(c.to_string());
            }
        }
        if !word.is_empty() {
            words.insert(word);
        }
    }
    words.into_iter().collect()
}

fn model_config(spec: &ScratchSpec, vocab_size: usize) -> serde_json::Value {
    match spec.family {
        BackendFamily::CausalLm => json!({
            "model_type": "gpt2",
            "architectures": ["GPT2LMHeadModel"],
            "vocab_size": vocab_size,
            "n_embd": spec.hidden,
            "n_layer": spec.layers,
            "n_head": spec.heads,
            "n_inner": spec.intermediate,
            "n_positions": spec.max_positions,
            "activation_function": "gelu_new",
            "layer_norm_epsilon": 1e-5,
            "resid_pdrop": spec.dropout,
            "attn_pdrop": spec.dropout,
            "embd_pdrop": spec.dropout,
            "bos_token_id": BERT_SPECIALS.len(),
            "eos_token_id": BERT_SPECIALS.len(),
        }),
        family => {
            let mut config = json!({
                "model_type": "bert",
                "architectures": [match family {
                    BackendFamily::Nli => "BertForSequenceClassification",
                    _ => "BertForMaskedLM",
                }],
                "vocab_size": vocab_size,
                "hidden_size": spec.hidden,
                "num_hidden_layers": spec.layers,
                "num_attention_heads": spec.heads,
                "intermediate_size": spec.intermediate,
                "max_position_embeddings": spec.max_positions,
                "type_vocab_size": 2,
                "hidden_act": "gelu",
                "layer_norm_eps": 1e-12,
                "hidden_dropout_prob": spec.dropout,
                "attention_probs_dropout_prob": spec.dropout,
                "pad_token_id": 0,
            });
            if family == BackendFamily::Nli {
                config["id2label"] = json!({"0": "entailment", "1": "neutral", "2": "contradiction"});
                config["label2id"] = json!({"entailment": 0, "neutral": 1, "contradiction": 2});
            }
            config
        }
    }
}

/// Writes `config.json`, `tokenizer.json` and `model.safetensors` to `dir`.
pub fn write_scratch_model(dir: &Path, spec: &ScratchSpec, words: &[String]) -> Result<()> {
    if spec.hidden == 0 || spec.heads == 0 || spec.hidden % spec.heads != 0 {
        return Err(Error::InvalidInput(format!(
            "hidden size {} must be a positive multiple of the head count {}",
            spec.hidden, spec.heads
        )));
    }
    let mut specials = BERT_SPECIALS.to_vec();
    if spec.family == BackendFamily::CausalLm {
        specials.push(GPT2_EOS);
    }
    let tokenizer = word_level_tokenizer(words, &specials)?;
    let vocab_size = tokenizer.get_vocab_size(true);
    let config = HfConfig::parse(&model_config(spec, vocab_size).to_string())?;
    let codec = TextCodec::new(tokenizer, &config.model, None)?;
    let params = Params::new(Device::Cpu);
    let network = Network::build(&params, &config, spec.family, PairReadout::Nsp, None)?;
    initialize(&params.varmap, spec.seed)?;
    NeuralBackend::from_parts(BackendDescriptor::generic(spec.family), params, network, codec, config).save(dir)
}
