//! Differentiable building blocks. candle's fused layer-norm and softmax
//! kernels have no backward pass, so both are spelled out here.

use std::cell::RefCell;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Init, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hf_config::Activation;

pub type CResult<T> = candle_core::Result<T>;

/// Converts a candle error into the workspace error type.
pub fn backend_err(e: candle_core::Error) -> atsc_core::Error {
    atsc_core::Error::Backend(e.to_string())
}

/// Named parameter store. Every tensor starts at zero; values come from
/// [`crate::weights::initialize`] and then the checkpoint.
#[derive(Clone)]
pub struct Params {
    pub varmap: VarMap,
    pub device: Device,
    prefix: String,
}

impl Params {
    pub fn new(device: Device) -> Self {
        Params {
            varmap: VarMap::new(),
            device,
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: &str) -> Self {
        Params {
            varmap: self.varmap.clone(),
            device: self.device.clone(),
            prefix: format!("{}{name}.", self.prefix),
        }
    }

    pub fn get(&self, shape: &[usize], name: &str) -> CResult<Tensor> {
        self.varmap
            .get(shape, &format!("{}{name}", self.prefix), Init::Const(0.0), DType::F32, &self.device)
    }
}

pub fn linear(p: &Params, input: usize, output: usize) -> CResult<candle_nn::Linear> {
    Ok(candle_nn::Linear::new(p.get(&[output, input], "weight")?, Some(p.get(&[output], "bias")?)))
}

/// GPT-2's transposed linear layer: weight is `[in, out]`.
pub struct Conv1D {
    weight: Tensor,
    bias: Tensor,
}

impl Conv1D {
    pub fn new(p: &Params, input: usize, output: usize) -> CResult<Self> {
        Ok(Conv1D {
            weight: p.get(&[input, output], "weight")?,
            bias: p.get(&[output], "bias")?,
        })
    }
}

impl Module for Conv1D {
    fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        x.broadcast_matmul(&self.weight)?.broadcast_add(&self.bias)
    }
}

pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(p: &Params, size: usize, eps: f64) -> CResult<Self> {
        Ok(LayerNorm {
            weight: p.get(&[size], "weight")?,
            bias: p.get(&[size], "bias")?,
            eps,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> CResult<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

pub fn activate(x: &Tensor, activation: Activation) -> CResult<Tensor> {
    match activation {
        Activation::GeluErf => x.gelu_erf(),
        Activation::GeluTanh => x.gelu(),
        Activation::Relu => x.relu(),
    }
}

pub fn softmax_last(x: &Tensor) -> CResult<Tensor> {
    candle_nn::ops::softmax(x, D::Minus1)
}

/// Seeded dropout masks; absent at evaluation time.
pub struct DropoutRng(RefCell<ChaCha8Rng>);

impl DropoutRng {
    pub fn new(seed: u64) -> Self {
        DropoutRng(RefCell::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

pub fn dropout(x: &Tensor, p: f64, rng: Option<&DropoutRng>) -> CResult<Tensor> {
    let Some(rng) = rng else { return Ok(x.clone()) };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = (1.0 / (1.0 - p)) as f32;
    let mut rng = rng.0.borrow_mut();
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    x * Tensor::from_vec(mask, x.shape(), x.device())?
}

/// Additive attention bias `[B, 1, 1, T]`: 0 for real tokens, large negative for padding.
pub fn padding_bias(mask: &Tensor) -> CResult<Tensor> {
    let (b, t) = mask.dims2()?;
    ((mask - 1.0)? * 1e4)?.reshape((b, 1, 1, t))
}

/// Scaled dot-product attention over `[B, heads, T, head_dim]` inputs.
pub fn attend(q: &Tensor, k: &Tensor, v: &Tensor, bias: &Tensor, p: f64, rng: Option<&DropoutRng>) -> CResult<Tensor> {
    let head_dim = q.dim(D::Minus1)?;
    let scores = (q.matmul(&k.t()?)? / (head_dim as f64).sqrt())?;
    let probs = softmax_last(&scores.broadcast_add(bias)?)?;
    let probs = dropout(&probs, p, rng)?;
    probs.matmul(v)
}

/// `[B, T, H]` to `[B, heads, T, H / heads]`.
pub fn split_heads(x: &Tensor, heads: usize) -> CResult<Tensor> {
    let (b, t, h) = x.dims3()?;
    x.reshape((b, t, heads, h / heads))?.transpose(1, 2)?.contiguous()
}

pub fn merge_heads(x: &Tensor) -> CResult<Tensor> {
    let (b, heads, t, d) = x.dims4()?;
    x.transpose(1, 2)?.contiguous()?.reshape((b, t, heads * d))
}

/// Padded token batch.
pub struct Batch {
    pub ids: Tensor,
    pub type_ids: Tensor,
    /// 1.0 for real tokens.
    pub mask: Tensor,
    pub lengths: Vec<usize>,
    pub width: usize,
}

impl Batch {
    pub fn new(sequences: &[(Vec<u32>, Vec<u32>)], pad: u32, device: &Device) -> CResult<Self> {
        let width = sequences.iter().map(|(ids, _)| ids.len()).max().unwrap_or(0).max(1);
        let b = sequences.len();
        let mut ids = Vec::with_capacity(b * width);
        let mut types = Vec::with_capacity(b * width);
        let mut mask = Vec::with_capacity(b * width);
        let mut lengths = Vec::with_capacity(b);
        for (seq, ty) in sequences {
            lengths.push(seq.len());
            for i in 0..width {
                ids.push(seq.get(i).copied().unwrap_or(pad));
                types.push(ty.get(i).copied().unwrap_or(0));
                mask.push(if i < seq.len() { 1f32 } else { 0.0 });
            }
        }
        Ok(Batch {
            ids: Tensor::from_vec(ids, (b, width), device)?,
            type_ids: Tensor::from_vec(types, (b, width), device)?,
            mask: Tensor::from_vec(mask, (b, width), device)?,
            lengths,
            width,
        })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }
}

/// Rows of a `[B, T, H]` tensor at `(batch, position)` pairs, as `[N, H]`.
pub fn gather_rows(hidden: &Tensor, positions: &[(usize, usize)]) -> CResult<Tensor> {
    let (b, t, h) = hidden.dims3()?;
    let flat = hidden.reshape((b * t, h))?;
    let index: Vec<u32> = positions.iter().map(|&(i, p)| (i * t + p) as u32).collect();
    let index = Tensor::from_vec(index, positions.len(), hidden.device())?;
    flat.index_select(&index, 0)
}
