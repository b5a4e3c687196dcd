//! BERT and RoBERTa encoders with their masked-LM and classification heads.
//! Parameter names follow the Hugging Face checkpoints with the base-model
//! prefix (`bert.`, `roberta.`) stripped.

use candle_core::{Module, Tensor};

use crate::hf_config::{Arch, ModelConfig};
use crate::nn::{
    activate, attend, dropout, linear, merge_heads, padding_bias, split_heads, Batch, CResult, DropoutRng, LayerNorm,
    Params,
};

struct Layer {
    query: candle_nn::Linear,
    key: candle_nn::Linear,
    value: candle_nn::Linear,
    attention_out: candle_nn::Linear,
    attention_norm: LayerNorm,
    intermediate: candle_nn::Linear,
    output: candle_nn::Linear,
    output_norm: LayerNorm,
}

impl Layer {
    fn new(p: &Params, c: &ModelConfig) -> CResult<Self> {
        let h = c.hidden;
        let attn = p.pp("attention");
        Ok(Layer {
            query: linear(&attn.pp("self").pp("query"), h, h)?,
            key: linear(&attn.pp("self").pp("key"), h, h)?,
            value: linear(&attn.pp("self").pp("value"), h, h)?,
            attention_out: linear(&attn.pp("output").pp("dense"), h, h)?,
            attention_norm: LayerNorm::new(&attn.pp("output").pp("LayerNorm"), h, c.layer_norm_eps)?,
            intermediate: linear(&p.pp("intermediate").pp("dense"), h, c.intermediate)?,
            output: linear(&p.pp("output").pp("dense"), c.intermediate, h)?,
            output_norm: LayerNorm::new(&p.pp("output").pp("LayerNorm"), h, c.layer_norm_eps)?,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor, c: &ModelConfig, rng: Option<&DropoutRng>) -> CResult<Tensor> {
        let q = split_heads(&self.query.forward(x)?, c.heads)?;
        let k = split_heads(&self.key.forward(x)?, c.heads)?;
        let v = split_heads(&self.value.forward(x)?, c.heads)?;
        let context = merge_heads(&attend(&q, &k, &v, bias, c.attention_dropout, rng)?)?;
        let attended = dropout(&self.attention_out.forward(&context)?, c.hidden_dropout, rng)?;
        let x = self.attention_norm.forward(&(attended + x)?)?;
        let inner = activate(&self.intermediate.forward(&x)?, c.activation)?;
        let out = dropout(&self.output.forward(&inner)?, c.hidden_dropout, rng)?;
        self.output_norm.forward(&(out + x)?)
    }
}

pub struct Encoder {
    pub config: ModelConfig,
    word: Tensor,
    position: Tensor,
    token_type: Option<Tensor>,
    norm: LayerNorm,
    layers: Vec<Layer>,
    pooler: Option<candle_nn::Linear>,
}

impl Encoder {
    pub fn new(p: &Params, config: &ModelConfig, with_pooler: bool) -> CResult<Self> {
        let c = config;
        let emb = p.pp("embeddings");
        let token_type = if c.type_vocab_size > 0 {
            Some(emb.pp("token_type_embeddings").get(&[c.type_vocab_size, c.hidden], "weight")?)
        } else {
            None
        };
        let layers = (0..c.layers)
            .map(|i| Layer::new(&p.pp("encoder").pp("layer").pp(&i.to_string()), c))
            .collect::<CResult<_>>()?;
        let pooler = if with_pooler {
            Some(linear(&p.pp("pooler").pp("dense"), c.hidden, c.hidden)?)
        } else {
            None
        };
        Ok(Encoder {
            config: c.clone(),
            word: emb.pp("word_embeddings").get(&[c.vocab_size, c.hidden], "weight")?,
            position: emb.pp("position_embeddings").get(&[c.max_positions, c.hidden], "weight")?,
            token_type,
            norm: LayerNorm::new(&emb.pp("LayerNorm"), c.hidden, c.layer_norm_eps)?,
            layers,
            pooler,
        })
    }

    pub fn word_embeddings(&self) -> &Tensor {
        &self.word
    }

    /// Final hidden states, `[B, T, H]`.
    pub fn forward(&self, batch: &Batch, rng: Option<&DropoutRng>) -> CResult<Tensor> {
        let c = &self.config;
        let (b, t) = batch.ids.dims2()?;
        let words = self.word.index_select(&batch.ids.flatten_all()?, 0)?.reshape((b, t, c.hidden))?;
        let offset = match c.arch {
            Arch::Roberta => c.pad_token_id + 1,
            _ => 0,
        };
        let positions = Tensor::arange(offset, offset + t as u32, batch.ids.device())?;
        let mut x = words.broadcast_add(&self.position.index_select(&positions, 0)?)?;
        if let Some(types) = &self.token_type {
            let ty = types.index_select(&batch.type_ids.flatten_all()?, 0)?.reshape((b, t, c.hidden))?;
            x = (x + ty)?;
        }
        let mut x = dropout(&self.norm.forward(&x)?, c.hidden_dropout, rng)?;
        let bias = padding_bias(&batch.mask)?;
        for layer in &self.layers {
            x = layer.forward(&x, &bias, c, rng)?;
        }
        Ok(x)
    }

    /// tanh(dense(first token)), `[B, H]`.
    pub fn pool(&self, hidden: &Tensor) -> CResult<Tensor> {
        let first = hidden.narrow(1, 0, 1)?.squeeze(1)?;
        match &self.pooler {
            Some(pooler) => pooler.forward(&first)?.tanh(),
            None => candle_core::bail!("encoder was built without a pooler"),
        }
    }
}

/// Vocabulary logits at selected positions. The decoder is tied to the word embeddings.
pub struct MaskedLmHead {
    dense: candle_nn::Linear,
    norm: LayerNorm,
    bias: Tensor,
    activation: crate::hf_config::Activation,
}

impl MaskedLmHead {
    pub fn new(p: &Params, c: &ModelConfig) -> CResult<Self> {
        let (dense, norm, bias) = match c.arch {
            Arch::Roberta => {
                let head = p.pp("lm_head");
                (
                    linear(&head.pp("dense"), c.hidden, c.hidden)?,
                    LayerNorm::new(&head.pp("layer_norm"), c.hidden, c.layer_norm_eps)?,
                    head.get(&[c.vocab_size], "bias")?,
                )
            }
            _ => {
                let head = p.pp("cls").pp("predictions");
                (
                    linear(&head.pp("transform").pp("dense"), c.hidden, c.hidden)?,
                    LayerNorm::new(&head.pp("transform").pp("LayerNorm"), c.hidden, c.layer_norm_eps)?,
                    head.get(&[c.vocab_size], "bias")?,
                )
            }
        };
        Ok(MaskedLmHead {
            dense,
            norm,
            bias,
            activation: c.activation,
        })
    }

    /// `[N, H]` hidden rows to `[N, V]` logits.
    pub fn logits(&self, rows: &Tensor, word_embeddings: &Tensor) -> CResult<Tensor> {
        let x = activate(&self.dense.forward(rows)?, self.activation)?;
        let x = self.norm.forward(&x)?;
        x.matmul(&word_embeddings.t()?)?.broadcast_add(&self.bias)
    }
}

/// Where a sequence classifier reads the encoder output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Last hidden state of the first token.
    FirstToken,
    /// The pretrained pooler (dense + tanh over the first token).
    Pooler,
    /// RoBERTa's dense + tanh + projection head.
    RobertaHead,
}

pub struct ClassifierHead {
    readout: Readout,
    dense: Option<candle_nn::Linear>,
    out: candle_nn::Linear,
    dropout: f64,
    pub labels: usize,
}

impl ClassifierHead {
    pub fn new(p: &Params, c: &ModelConfig, readout: Readout, labels: usize) -> CResult<Self> {
        let head = p.pp("classifier");
        let (dense, out) = match readout {
            Readout::RobertaHead => (
                Some(linear(&head.pp("dense"), c.hidden, c.hidden)?),
                linear(&head.pp("out_proj"), c.hidden, labels)?,
            ),
            _ => (None, linear(&head, c.hidden, labels)?),
        };
        Ok(ClassifierHead {
            readout,
            dense,
            out,
            dropout: c.hidden_dropout,
            labels,
        })
    }

    /// `[B, labels]` logits.
    pub fn logits(&self, encoder: &Encoder, hidden: &Tensor, rng: Option<&DropoutRng>) -> CResult<Tensor> {
        let first = || hidden.narrow(1, 0, 1)?.squeeze(1);
        let features = match self.readout {
            Readout::FirstToken => first()?,
            Readout::Pooler => encoder.pool(hidden)?,
            Readout::RobertaHead => {
                let x = dropout(&first()?, self.dropout, rng)?;
                self.dense.as_ref().expect("roberta head").forward(&x)?.tanh()?
            }
        };
        self.out.forward(&dropout(&features, self.dropout, rng)?)
    }
}
