//! The subset of Hugging Face `config.json` the backends understand.

use std::collections::BTreeMap;
use std::path::Path;

use atsc_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Bert,
    Roberta,
    Gpt2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    GeluErf,
    GeluTanh,
    Relu,
}

impl Activation {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "gelu" => Ok(Activation::GeluErf),
            "gelu_new" | "gelu_pytorch_tanh" | "gelu_fast" => Ok(Activation::GeluTanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Backend(format!("unsupported activation `{other}`"))),
        }
    }
}

/// Hyperparameters of the transformer body.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub activation: Activation,
    pub max_positions: usize,
    /// Zero for GPT-2.
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
    pub hidden_dropout: f64,
    pub attention_dropout: f64,
    pub pad_token_id: u32,
}

impl ModelConfig {
    /// Positions actually usable by inputs; RoBERTa reserves `pad + 1` slots.
    pub fn usable_positions(&self) -> usize {
        match self.arch {
            Arch::Roberta => self.max_positions - self.pad_token_id as usize - 1,
            _ => self.max_positions,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Raw {
    model_type: Option<String>,
    vocab_size: usize,
    hidden_size: Option<usize>,
    num_hidden_layers: Option<usize>,
    num_attention_heads: Option<usize>,
    intermediate_size: Option<usize>,
    hidden_act: Option<String>,
    max_position_embeddings: Option<usize>,
    type_vocab_size: Option<usize>,
    layer_norm_eps: Option<f64>,
    hidden_dropout_prob: Option<f64>,
    attention_probs_dropout_prob: Option<f64>,
    pad_token_id: Option<u32>,
    n_embd: Option<usize>,
    n_layer: Option<usize>,
    n_head: Option<usize>,
    n_inner: Option<usize>,
    n_positions: Option<usize>,
    layer_norm_epsilon: Option<f64>,
    resid_pdrop: Option<f64>,
    attn_pdrop: Option<f64>,
    activation_function: Option<String>,
    id2label: Option<BTreeMap<String, String>>,
}

/// A parsed `config.json` plus the original document, kept for saving.
#[derive(Debug, Clone)]
pub struct HfConfig {
    pub model: ModelConfig,
    /// Label names by class index, when the checkpoint has a classifier.
    pub id2label: Option<Vec<String>>,
    pub raw: serde_json::Value,
}

fn need<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::Backend(format!("config.json lacks `{key}`")))
}

impl HfConfig {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("config.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw_value: serde_json::Value = serde_json::from_str(text)?;
        let raw: Raw = serde_json::from_value(raw_value.clone())?;
        let model_type = raw.model_type.as_deref().unwrap_or("bert");
        let model = match model_type {
            "bert" | "roberta" | "xlm-roberta" => {
                let arch = if model_type == "bert" { Arch::Bert } else { Arch::Roberta };
                ModelConfig {
                    arch,
                    vocab_size: raw.vocab_size,
                    hidden: need(raw.hidden_size, "hidden_size")?,
                    layers: need(raw.num_hidden_layers, "num_hidden_layers")?,
                    heads: need(raw.num_attention_heads, "num_attention_heads")?,
                    intermediate: need(raw.intermediate_size, "intermediate_size")?,
                    activation: Activation::parse(raw.hidden_act.as_deref().unwrap_or("gelu"))?,
                    max_positions: raw.max_position_embeddings.unwrap_or(512),
                    type_vocab_size: raw.type_vocab_size.unwrap_or(2),
                    layer_norm_eps: raw.layer_norm_eps.unwrap_or(1e-12),
                    hidden_dropout: raw.hidden_dropout_prob.unwrap_or(0.1),
                    attention_dropout: raw.attention_probs_dropout_prob.unwrap_or(0.1),
                    pad_token_id: raw.pad_token_id.unwrap_or(if arch == Arch::Roberta { 1 } else { 0 }),
                }
            }
            "gpt2" => {
                let hidden = need(raw.n_embd, "n_embd")?;
                ModelConfig {
                    arch: Arch::Gpt2,
                    vocab_size: raw.vocab_size,
                    hidden,
                    layers: need(raw.n_layer, "n_layer")?,
                    heads: need(raw.n_head, "n_head")?,
                    intermediate: raw.n_inner.unwrap_or(4 * hidden),
                    activation: Activation::parse(raw.activation_function.as_deref().unwrap_or("gelu_new"))?,
                    max_positions: raw.n_positions.unwrap_or(1024),
                    type_vocab_size: 0,
                    layer_norm_eps: raw.layer_norm_epsilon.unwrap_or(1e-5),
                    hidden_dropout: raw.resid_pdrop.unwrap_or(0.1),
                    attention_dropout: raw.attn_pdrop.unwrap_or(0.1),
                    pad_token_id: raw.pad_token_id.unwrap_or(0),
                }
            }
            other => return Err(Error::Backend(format!("unsupported model_type `{other}`"))),
        };
        if model.hidden % model.heads != 0 {
            return Err(Error::Backend(format!(
                "hidden size {} is not divisible by {} heads",
                model.hidden, model.heads
            )));
        }
        let id2label = raw
            .id2label
            .map(|m| {
                let mut labels: Vec<(usize, String)> = m
                    .into_iter()
                    .map(|(k, v)| {
                        k.parse::<usize>()
                            .map(|i| (i, v))
                            .map_err(|_| Error::Backend(format!("bad id2label key `{k}`")))
                    })
                    .collect::<Result<_>>()?;
                labels.sort();
                if labels.iter().enumerate().any(|(i, (k, _))| i != *k) {
                    return Err(Error::Backend("id2label keys are not 0..n".into()));
                }
                Ok(labels.into_iter().map(|(_, v)| v).collect())
            })
            .transpose()?;
        Ok(HfConfig {
            model,
            id2label,
            raw: raw_value,
        })
    }
}
