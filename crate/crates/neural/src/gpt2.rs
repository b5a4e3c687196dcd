//! GPT-2 decoder. Parameter names follow the Hugging Face checkpoint with the
//! `transformer.` prefix stripped; the LM head is tied to `wte`.

use candle_core::{Module, Tensor};

use crate::hf_config::ModelConfig;
use crate::nn::{
    activate, attend, dropout, merge_heads, padding_bias, split_heads, Batch, CResult, Conv1D, DropoutRng, LayerNorm,
    Params,
};

struct Block {
    norm1: LayerNorm,
    qkv: Conv1D,
    attention_out: Conv1D,
    norm2: LayerNorm,
    up: Conv1D,
    down: Conv1D,
}

impl Block {
    fn new(p: &Params, c: &ModelConfig) -> CResult<Self> {
        let h = c.hidden;
        Ok(Block {
            norm1: LayerNorm::new(&p.pp("ln_1"), h, c.layer_norm_eps)?,
            qkv: Conv1D::new(&p.pp("attn").pp("c_attn"), h, 3 * h)?,
            attention_out: Conv1D::new(&p.pp("attn").pp("c_proj"), h, h)?,
            norm2: LayerNorm::new(&p.pp("ln_2"), h, c.layer_norm_eps)?,
            up: Conv1D::new(&p.pp("mlp").pp("c_fc"), h, c.intermediate)?,
            down: Conv1D::new(&p.pp("mlp").pp("c_proj"), c.intermediate, h)?,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor, c: &ModelConfig, rng: Option<&DropoutRng>) -> CResult<Tensor> {
        let h = c.hidden;
        let qkv = self.qkv.forward(&self.norm1.forward(x)?)?;
        let q = split_heads(&qkv.narrow(2, 0, h)?, c.heads)?;
        let k = split_heads(&qkv.narrow(2, h, h)?, c.heads)?;
        let v = split_heads(&qkv.narrow(2, 2 * h, h)?, c.heads)?;
        let context = merge_heads(&attend(&q, &k, &v, bias, c.attention_dropout, rng)?)?;
        let x = (x + dropout(&self.attention_out.forward(&context)?, c.hidden_dropout, rng)?)?;
        let inner = activate(&self.up.forward(&self.norm2.forward(&x)?)?, c.activation)?;
        x + dropout(&self.down.forward(&inner)?, c.hidden_dropout, rng)?
    }
}

pub struct Gpt2 {
    pub config: ModelConfig,
    wte: Tensor,
    wpe: Tensor,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl Gpt2 {
    pub fn new(p: &Params, config: &ModelConfig) -> CResult<Self> {
        let c = config;
        Ok(Gpt2 {
            config: c.clone(),
            wte: p.pp("wte").get(&[c.vocab_size, c.hidden], "weight")?,
            wpe: p.pp("wpe").get(&[c.max_positions, c.hidden], "weight")?,
            blocks: (0..c.layers)
                .map(|i| Block::new(&p.pp("h").pp(&i.to_string()), c))
                .collect::<CResult<_>>()?,
            norm: LayerNorm::new(&p.pp("ln_f"), c.hidden, c.layer_norm_eps)?,
        })
    }

    /// Final hidden states, `[B, T, H]`, under a causal mask.
    pub fn forward(&self, batch: &Batch, rng: Option<&DropoutRng>) -> CResult<Tensor> {
        let c = &self.config;
        let (b, t) = batch.ids.dims2()?;
        let device = batch.ids.device();
        let words = self.wte.index_select(&batch.ids.flatten_all()?, 0)?.reshape((b, t, c.hidden))?;
        let positions = Tensor::arange(0u32, t as u32, device)?;
        let mut x = dropout(&words.broadcast_add(&self.wpe.index_select(&positions, 0)?)?, c.hidden_dropout, rng)?;
        let causal: Vec<f32> = (0..t)
            .flat_map(|i| (0..t).map(move |j| if j <= i { 0.0 } else { -1e4 }))
            .collect();
        let causal = Tensor::from_vec(causal, (1, 1, t, t), device)?;
        let bias = causal.broadcast_add(&padding_bias(&batch.mask)?)?;
        for block in &self.blocks {
            x = block.forward(&x, &bias, c, rng)?;
        }
        self.norm.forward(&x)
    }

    /// `[N, H]` hidden rows to `[N, V]` logits.
    pub fn logits(&self, rows: &Tensor) -> CResult<Tensor> {
        rows.matmul(&self.wte.t()?)
    }
}
