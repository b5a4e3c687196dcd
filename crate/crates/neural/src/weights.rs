//! Parameter initialisation, checkpoint loading and saving.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use atsc_core::pretrain::derive_seed;
use atsc_core::{Error, Result};
use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::{debug, warn};

use crate::hf_config::Arch;
use crate::nn::backend_err;

const INIT_STD: f64 = 0.02;

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn is_norm(name: &str) -> bool {
    ["LayerNorm.", "layer_norm.", "ln_1.", "ln_2.", "ln_f."]
        .iter()
        .any(|n| name.contains(n))
}

/// Norm weights 1, biases 0, everything else uniform with std 0.02. Each
/// tensor draws from its own stream keyed by name, so values do not depend
/// on which other parameters exist.
pub fn initialize(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let names: Vec<&String> = {
        let mut n: Vec<_> = data.keys().collect();
        n.sort();
        n
    };
    let bound = INIT_STD * 3f64.sqrt();
    for name in names {
        let var = &data[name];
        let shape = var.shape().clone();
        let count = shape.elem_count();
        let values: Vec<f32> = if name.ends_with(".bias") || name == "bias" {
            vec![0.0; count]
        } else if is_norm(name) {
            vec![1.0; count]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, fnv1a(name)));
            (0..count).map(|_| rng.random_range(-bound..bound) as f32).collect()
        };
        var.set(&Tensor::from_vec(values, shape, var.device()).map_err(backend_err)?)
            .map_err(backend_err)?;
    }
    Ok(())
}

/// Checkpoint key to parameter name.
pub fn canonical_name(key: &str) -> String {
    let mut name = key;
    for prefix in ["bert.", "roberta.", "transformer.", "model."] {
        if let Some(rest) = name.strip_prefix(prefix) {
            name = rest;
            break;
        }
    }
    name.replace("LayerNorm.gamma", "LayerNorm.weight")
        .replace("LayerNorm.beta", "LayerNorm.bias")
}

/// Parameter name to checkpoint key, in the layout `transformers` loads.
pub fn checkpoint_name(name: &str, arch: Arch) -> String {
    let base = match arch {
        Arch::Bert => ["embeddings.", "encoder.", "pooler."].iter().any(|p| name.starts_with(p)).then_some("bert."),
        Arch::Roberta => ["embeddings.", "encoder.", "pooler."]
            .iter()
            .any(|p| name.starts_with(p))
            .then_some("roberta."),
        Arch::Gpt2 => ["wte.", "wpe.", "h.", "ln_f."].iter().any(|p| name.starts_with(p)).then_some("transformer."),
    };
    format!("{}{name}", base.unwrap_or(""))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadSummary {
    pub loaded: usize,
    /// Parameters with no checkpoint tensor; they keep their initial values.
    pub missing: Vec<String>,
    /// Parameters whose checkpoint tensor had another shape.
    pub mismatched: Vec<String>,
}

fn read_tensors(dir: &Path) -> Result<HashMap<String, Tensor>> {
    let safetensors = dir.join("model.safetensors");
    if safetensors.is_file() {
        return candle_core::safetensors::load(&safetensors, &Device::Cpu).map_err(backend_err);
    }
    let pickle = dir.join("pytorch_model.bin");
    if pickle.is_file() {
        return Ok(candle_core::pickle::read_all(&pickle)
            .map_err(backend_err)?
            .into_iter()
            .collect());
    }
    Err(Error::Backend(format!(
        "{} has neither model.safetensors nor pytorch_model.bin",
        dir.display()
    )))
}

/// Copies checkpoint tensors into matching parameters.
pub fn load_checkpoint(varmap: &VarMap, dir: &Path) -> Result<LoadSummary> {
    let tensors = read_tensors(dir)?;
    let by_name: HashMap<String, &Tensor> = tensors.iter().map(|(k, v)| (canonical_name(k), v)).collect();
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut summary = LoadSummary::default();
    for name in names {
        let var = &data[name];
        match by_name.get(name.as_str()) {
            Some(tensor) if tensor.shape() == var.shape() => {
                let value = tensor.to_dtype(DType::F32).map_err(backend_err)?;
                var.set(&value).map_err(backend_err)?;
                summary.loaded += 1;
            }
            Some(tensor) => {
                warn!(parameter = %name, checkpoint = ?tensor.shape(), expected = ?var.shape(), "shape mismatch; keeping fresh initialisation");
                summary.mismatched.push(name.clone());
            }
            None => summary.missing.push(name.clone()),
        }
    }
    if summary.loaded == 0 {
        return Err(Error::Backend(format!("no tensors in {} match the model", dir.display())));
    }
    if !summary.missing.is_empty() {
        debug!(missing = ?summary.missing, "parameters initialised fresh");
    }
    Ok(summary)
}

pub fn save_checkpoint(varmap: &VarMap, arch: Arch, path: &Path) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let tensors: BTreeMap<String, Tensor> = data
        .iter()
        .map(|(name, var)| (checkpoint_name(name, arch), var.as_tensor().clone()))
        .collect();
    let tensors: HashMap<String, Tensor> = tensors.into_iter().collect();
    candle_core::safetensors::save(&tensors, path).map_err(backend_err)
}
