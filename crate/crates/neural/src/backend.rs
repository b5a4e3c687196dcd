//! [`Backend`] implementation over the candle networks.

use std::path::Path;

use atsc_core::backend::{
    Backend, BackendDescriptor, BackendEntry, BackendFamily, FitReport, LoadOptions, NliLogits, PairLogits,
    PairReadout, TokenDistribution, TrainingInstance, TrainingSchedule, Vocabulary,
};
use atsc_core::corpus::shuffled_indices;
use atsc_core::pretrain::derive_seed;
use atsc_core::prompting::PromptMode;
use atsc_core::{Error, Result};
use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use tracing::{debug, warn};

use crate::encoder::{ClassifierHead, Encoder, MaskedLmHead, Readout};
use crate::gpt2::Gpt2;
use crate::hf_config::{Arch, HfConfig};
use crate::nn::{backend_err, gather_rows, Batch, CResult, DropoutRng, Params};
use crate::text::TextCodec;
use crate::weights::{initialize, load_checkpoint, save_checkpoint};

/// Marker written into saved configs so a reloaded pair classifier counts as trained.
const FITTED_KEY: &str = "atsc_fitted";

/// Logit positions of the three NLI classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NliOrder {
    pub entail: usize,
    pub neutral: usize,
    pub contradict: usize,
}

impl NliOrder {
    /// Matches label names by prefix (`entail*`, `neutral`, `contra*`).
    pub fn from_names(names: &[String]) -> Result<Self> {
        let find = |prefix: &str| {
            names
                .iter()
                .position(|n| n.to_lowercase().starts_with(prefix))
                .ok_or_else(|| {
                    Error::Backend(format!(
                        "NLI labels {names:?} lack `{prefix}*`; set the `nli_labels` backend option"
                    ))
                })
        };
        Ok(NliOrder {
            entail: find("entail")?,
            neutral: find("neutral")?,
            contradict: find("contra")?,
        })
    }
}

pub enum Network {
    MaskedLm { encoder: Encoder, head: MaskedLmHead },
    Nli { encoder: Encoder, head: ClassifierHead, order: NliOrder },
    Pair { encoder: Encoder, head: ClassifierHead },
    CausalLm(Gpt2),
}

impl Network {
    /// Declares the parameters for `family` on top of `config`.
    pub fn build(
        params: &Params,
        config: &HfConfig,
        family: BackendFamily,
        readout: PairReadout,
        nli_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let c = &config.model;
        let need_encoder = || {
            if c.arch == Arch::Gpt2 {
                Err(Error::Backend(format!("{} needs an encoder checkpoint, found GPT-2", family.as_str())))
            } else {
                Ok(())
            }
        };
        let net = match family {
            BackendFamily::MaskedLm => {
                need_encoder()?;
                Network::MaskedLm {
                    encoder: Encoder::new(params, c, false).map_err(backend_err)?,
                    head: MaskedLmHead::new(params, c).map_err(backend_err)?,
                }
            }
            BackendFamily::CausalLm => {
                if c.arch != Arch::Gpt2 {
                    return Err(Error::Backend("causal LM backends need a GPT-2 checkpoint".into()));
                }
                Network::CausalLm(Gpt2::new(params, c).map_err(backend_err)?)
            }
            BackendFamily::Nli => {
                need_encoder()?;
                let names = nli_labels
                    .or_else(|| config.id2label.clone())
                    .ok_or_else(|| Error::Backend("NLI checkpoint has no id2label; set `nli_labels`".into()))?;
                let order = NliOrder::from_names(&names)?;
                let readout = if c.arch == Arch::Roberta { Readout::RobertaHead } else { Readout::Pooler };
                Network::Nli {
                    encoder: Encoder::new(params, c, readout == Readout::Pooler).map_err(backend_err)?,
                    head: ClassifierHead::new(params, c, readout, names.len()).map_err(backend_err)?,
                    order,
                }
            }
            BackendFamily::PairClassifier => {
                need_encoder()?;
                let readout = match readout {
                    PairReadout::Cls => Readout::FirstToken,
                    PairReadout::Nsp => Readout::Pooler,
                };
                Network::Pair {
                    encoder: Encoder::new(params, c, readout == Readout::Pooler).map_err(backend_err)?,
                    head: ClassifierHead::new(params, c, readout, 3).map_err(backend_err)?,
                }
            }
        };
        Ok(net)
    }
}

pub struct NeuralBackend {
    descriptor: BackendDescriptor,
    params: Params,
    network: Network,
    codec: TextCodec,
    config: HfConfig,
    fitted: bool,
}

fn option_strings(entry: &BackendEntry, key: &str) -> Result<Option<Vec<String>>> {
    entry
        .options
        .get(key)
        .map(|v| {
            serde_json::from_value::<Vec<String>>(v.clone())
                .map_err(|_| Error::Backend(format!("backend option `{key}` must be a list of strings")))
        })
        .transpose()
}

fn to_f64(t: &Tensor) -> CResult<Vec<f64>> {
    Ok(t.flatten_all()?.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
}

/// Numerically careful softmax of one logit row.
fn probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl NeuralBackend {
    /// Loads the checkpoint described by `entry`.
    pub fn load(entry: &BackendEntry, options: LoadOptions) -> Result<Self> {
        let dir = &entry.path;
        let config = HfConfig::read(dir)?;
        let max_len = entry.options.get("max_len").and_then(|v| v.as_u64()).map(|v| v as usize);
        let codec = TextCodec::load(dir, &config.model, max_len)?;
        let readout = match options.readout {
            Some(r) => r,
            None => entry
                .options
                .get("readout")
                .map(|v| serde_json::from_value(v.clone()))
                .transpose()
                .map_err(|_| Error::Backend("backend option `readout` must be `cls` or `nsp`".into()))?
                .unwrap_or(PairReadout::Cls),
        };
        let params = Params::new(Device::Cpu);
        let network = Network::build(&params, &config, entry.descriptor.family, readout, option_strings(entry, "nli_labels")?)?;
        initialize(&params.varmap, options.seed)?;
        let summary = load_checkpoint(&params.varmap, dir)?;
        let head_missing = |prefix: &[&str]| summary.missing.iter().any(|m| prefix.iter().any(|p| m.starts_with(p)));
        match entry.descriptor.family {
            BackendFamily::Nli if head_missing(&["classifier", "pooler"]) => {
                return Err(Error::Backend(format!(
                    "{} has no trained NLI classifier",
                    dir.display()
                )));
            }
            BackendFamily::MaskedLm if head_missing(&["cls.", "lm_head."]) => {
                warn!(path = %dir.display(), "masked-LM head missing from checkpoint; using fresh weights");
            }
            _ => {}
        }
        debug!(path = %dir.display(), loaded = summary.loaded, fresh = summary.missing.len(), "backend loaded");
        let fitted = config.raw.get(FITTED_KEY).and_then(|v| v.as_bool()).unwrap_or(false);
        Ok(NeuralBackend {
            descriptor: entry.descriptor.clone(),
            params,
            network,
            codec,
            config,
            fitted,
        })
    }

    /// Assembles a backend from freshly initialised parts.
    pub fn from_parts(descriptor: BackendDescriptor, params: Params, network: Network, codec: TextCodec, config: HfConfig) -> Self {
        NeuralBackend {
            descriptor,
            params,
            network,
            codec,
            config,
            fitted: false,
        }
    }

    pub fn codec(&self) -> &TextCodec {
        &self.codec
    }

    fn device(&self) -> &Device {
        &self.params.device
    }

    fn batch(&self, sequences: &[(Vec<u32>, Vec<u32>)]) -> CResult<Batch> {
        Batch::new(sequences, self.codec.pad(), self.device())
    }

    fn distribution(&self, logits: &[f64], candidates: Option<&[&str]>) -> Result<TokenDistribution> {
        let probs = probabilities(logits);
        let entries = match candidates {
            Some(words) => words
                .iter()
                .map(|w| Ok((w.to_string(), probs[self.codec.label_id(w)? as usize])))
                .collect::<Result<_>>()?,
            None => probs
                .iter()
                .enumerate()
                .filter_map(|(id, p)| self.codec.token(id as u32).map(|t| (t, *p)))
                .collect(),
        };
        Ok(TokenDistribution {
            entries,
            restricted: candidates.is_some(),
        })
    }

    /// Masked sequence and the index of its mask token.
    fn cloze_sequence(&self, text: &str) -> Result<((Vec<u32>, Vec<u32>), usize)> {
        let text = self.codec.with_mask_token(text)?;
        let seq = self.codec.wrap_single(&self.codec.ids(&text)?);
        let mask = self.codec.mask_id().expect("checked by with_mask_token");
        let position = seq.0.iter().position(|&id| id == mask).ok_or(Error::MaskCount(0))?;
        Ok((seq, position))
    }

    fn pair_sequence(&self, first: &str, second: &str) -> Result<(Vec<u32>, Vec<u32>)> {
        if first.trim().is_empty() || second.trim().is_empty() {
            return Err(Error::InvalidInput("both segments must be non-empty".into()));
        }
        Ok(self.codec.wrap_pair(&self.codec.ids(first)?, &self.codec.ids(second)?))
    }

    fn classifier_logits(&self, sequences: &[(Vec<u32>, Vec<u32>)], rng: Option<&DropoutRng>) -> CResult<Tensor> {
        let batch = self.batch(sequences)?;
        match &self.network {
            Network::Nli { encoder, head, .. } | Network::Pair { encoder, head } => {
                head.logits(encoder, &encoder.forward(&batch, rng)?, rng)
            }
            _ => candle_core::bail!("not a classifier"),
        }
    }

    fn check_instance(&self, instance: &TrainingInstance) -> Result<()> {
        let ok = matches!(
            (instance, &self.network),
            (TrainingInstance::LabelWord { mode: PromptMode::Cloze, .. }, Network::MaskedLm { .. })
                | (TrainingInstance::LabelWord { mode: PromptMode::NextWord, .. }, Network::CausalLm(_))
                | (TrainingInstance::Entailment { .. }, Network::Nli { .. })
                | (TrainingInstance::Pair { .. }, Network::Pair { .. })
                | (TrainingInstance::MaskedLm { .. }, Network::MaskedLm { .. })
                | (TrainingInstance::CausalLm { .. }, Network::CausalLm(_))
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Unsupported {
                backend: self.descriptor.label(),
                capability: "this training objective",
            })
        }
    }

    /// Mean loss over `instances`, which all share one objective. `None`
    /// when the batch has no supervised position.
    fn batch_loss(&self, instances: &[&TrainingInstance], rng: Option<&DropoutRng>) -> Result<Option<Tensor>> {
        let dev = self.device().clone();
        let targets = |t: Vec<u32>| Tensor::from_vec(t.clone(), t.len(), &dev).map_err(backend_err);
        let ce = |logits: &Tensor, t: Vec<u32>| -> Result<Option<Tensor>> {
            let t = targets(t)?;
            Ok(Some(candle_nn::loss::cross_entropy(logits, &t).map_err(backend_err)?))
        };
        match instances[0] {
            TrainingInstance::LabelWord { .. } => {
                let mut sequences = Vec::new();
                let mut positions = Vec::new();
                let mut choices = Vec::new();
                let mut gold = Vec::new();
                for (i, inst) in instances.iter().enumerate() {
                    let TrainingInstance::LabelWord { text, mode, label_words, target } = inst else {
                        unreachable!("checked")
                    };
                    let (seq, pos) = match mode {
                        PromptMode::Cloze => self.cloze_sequence(text)?,
                        PromptMode::NextWord => {
                            let ids = self.codec.causal_prefix(text)?;
                            let last = ids.len() - 1;
                            ((ids.clone(), vec![0; ids.len()]), last)
                        }
                    };
                    sequences.push(seq);
                    positions.push((i, pos));
                    for w in label_words {
                        choices.push(self.codec.label_id(w)?);
                    }
                    gold.push(*target as u32);
                }
                let batch = self.batch(&sequences).map_err(backend_err)?;
                let logits = match &self.network {
                    Network::MaskedLm { encoder, head } => {
                        let hidden = encoder.forward(&batch, rng).map_err(backend_err)?;
                        let rows = gather_rows(&hidden, &positions).map_err(backend_err)?;
                        head.logits(&rows, encoder.word_embeddings()).map_err(backend_err)?
                    }
                    Network::CausalLm(gpt) => {
                        let hidden = gpt.forward(&batch, rng).map_err(backend_err)?;
                        let rows = gather_rows(&hidden, &positions).map_err(backend_err)?;
                        gpt.logits(&rows).map_err(backend_err)?
                    }
                    _ => unreachable!("checked"),
                };
                let index = Tensor::from_vec(choices, (instances.len(), 3), &dev).map_err(backend_err)?;
                let restricted = logits.gather(&index, 1).map_err(backend_err)?;
                ce(&restricted, gold)
            }
            TrainingInstance::Entailment { .. } => {
                let Network::Nli { order, .. } = &self.network else { unreachable!("checked") };
                let mut positive = Vec::new();
                let mut negative = Vec::new();
                let mut gold = Vec::new();
                for inst in instances {
                    let TrainingInstance::Entailment { premise, positive_hypothesis, negative_hypothesis, target } = inst
                    else {
                        unreachable!("checked")
                    };
                    positive.push(self.pair_sequence(premise, positive_hypothesis)?);
                    negative.push(self.pair_sequence(premise, negative_hypothesis)?);
                    gold.push(target.index() as u32);
                }
                let b = instances.len();
                let sequences: Vec<_> = positive.into_iter().chain(negative).collect();
                let logits = self.classifier_logits(&sequences, rng).map_err(backend_err)?;
                let combined = (|| -> CResult<Tensor> {
                    let pos = logits.narrow(0, 0, b)?;
                    let neg = logits.narrow(0, b, b)?;
                    let neutral = ((pos.narrow(1, order.neutral, 1)? + neg.narrow(1, order.neutral, 1)?)? * 0.5)?;
                    Tensor::cat(&[pos.narrow(1, order.entail, 1)?, neg.narrow(1, order.entail, 1)?, neutral], 1)
                })()
                .map_err(backend_err)?;
                ce(&combined, gold)
            }
            TrainingInstance::Pair { .. } => {
                let mut sequences = Vec::new();
                let mut gold = Vec::new();
                for inst in instances {
                    let TrainingInstance::Pair { text, aspect, target } = inst else { unreachable!("checked") };
                    sequences.push(self.pair_sequence(text, aspect)?);
                    gold.push(target.index() as u32);
                }
                let logits = self.classifier_logits(&sequences, rng).map_err(backend_err)?;
                ce(&logits, gold)
            }
            TrainingInstance::MaskedLm { .. } | TrainingInstance::CausalLm { .. } => {
                let mut sequences = Vec::new();
                let mut positions = Vec::new();
                let mut gold = Vec::new();
                for (i, inst) in instances.iter().enumerate() {
                    let (TrainingInstance::MaskedLm { input_ids, labels } | TrainingInstance::CausalLm { input_ids, labels }) =
                        inst
                    else {
                        unreachable!("checked")
                    };
                    let (seq, offset, skip) = match &self.network {
                        Network::MaskedLm { .. } => {
                            let skip = input_ids.len().saturating_sub(self.codec.max_len().saturating_sub(2));
                            (self.codec.wrap_single(input_ids), 1, skip)
                        }
                        _ => {
                            let skip = input_ids.len().saturating_sub(self.codec.max_len());
                            let ids = input_ids[skip..].to_vec();
                            let types = vec![0; ids.len()];
                            ((ids, types), 0, skip)
                        }
                    };
                    for (p, label) in labels.iter().enumerate().skip(skip) {
                        if let Some(l) = label {
                            positions.push((i, p - skip + offset));
                            gold.push(*l);
                        }
                    }
                    sequences.push(seq);
                }
                if gold.is_empty() {
                    return Ok(None);
                }
                let batch = self.batch(&sequences).map_err(backend_err)?;
                let logits = match &self.network {
                    Network::MaskedLm { encoder, head } => {
                        let hidden = encoder.forward(&batch, rng).map_err(backend_err)?;
                        let rows = gather_rows(&hidden, &positions).map_err(backend_err)?;
                        head.logits(&rows, encoder.word_embeddings()).map_err(backend_err)?
                    }
                    Network::CausalLm(gpt) => {
                        let hidden = gpt.forward(&batch, rng).map_err(backend_err)?;
                        let rows = gather_rows(&hidden, &positions).map_err(backend_err)?;
                        gpt.logits(&rows).map_err(backend_err)?
                    }
                    _ => unreachable!("checked"),
                };
                ce(&logits, gold)
            }
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`.
fn clip_grad_norm(vars: &[Var], grads: &mut GradStore, max_norm: f64) -> CResult<()> {
    let mut sum_sq = 0.0;
    for var in vars {
        if let Some(g) = grads.get(var) {
            sum_sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        for var in vars {
            if let Some(g) = grads.get(var) {
                let scaled = g.affine(scale, 0.0)?;
                grads.insert(var, scaled);
            }
        }
    }
    Ok(())
}

impl Backend for NeuralBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn mask_fill(&self, text: &str, candidates: Option<&[&str]>) -> Result<TokenDistribution> {
        let Network::MaskedLm { encoder, head } = &self.network else {
            return Err(self.unsupported("mask_fill"));
        };
        let (seq, position) = self.cloze_sequence(text)?;
        let logits = (|| -> CResult<Vec<f64>> {
            let hidden = encoder.forward(&self.batch(&[seq])?, None)?;
            let rows = gather_rows(&hidden, &[(0, position)])?;
            to_f64(&head.logits(&rows, encoder.word_embeddings())?)
        })()
        .map_err(backend_err)?;
        self.distribution(&logits, candidates)
    }

    fn next_token(&self, prefix: &str, candidates: Option<&[&str]>) -> Result<TokenDistribution> {
        let Network::CausalLm(gpt) = &self.network else {
            return Err(self.unsupported("next_token"));
        };
        let ids = self.codec.causal_prefix(prefix)?;
        let last = ids.len() - 1;
        let types = vec![0; ids.len()];
        let logits = (|| -> CResult<Vec<f64>> {
            let hidden = gpt.forward(&self.batch(&[(ids, types)])?, None)?;
            to_f64(&gpt.logits(&gather_rows(&hidden, &[(0, last)])?)?)
        })()
        .map_err(backend_err)?;
        self.distribution(&logits, candidates)
    }

    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliLogits> {
        let Network::Nli { order, .. } = &self.network else {
            return Err(self.unsupported("nli_score"));
        };
        let seq = self.pair_sequence(premise, hypothesis)?;
        let logits = self
            .classifier_logits(&[seq], None)
            .and_then(|l| to_f64(&l))
            .map_err(backend_err)?;
        Ok(NliLogits {
            entail: logits[order.entail],
            neutral: logits[order.neutral],
            contradict: logits[order.contradict],
        })
    }

    fn pair_classify(&self, text: &str, aspect: &str) -> Result<PairLogits> {
        if !matches!(self.network, Network::Pair { .. }) {
            return Err(self.unsupported("pair_classify"));
        }
        let seq = self.pair_sequence(text, aspect)?;
        let logits = self
            .classifier_logits(&[seq], None)
            .and_then(|l| to_f64(&l))
            .map_err(backend_err)?;
        Ok(PairLogits {
            scores: [logits[0], logits[1], logits[2]],
        })
    }

    fn fit(&mut self, instances: &[TrainingInstance], schedule: &TrainingSchedule) -> Result<FitReport> {
        if instances.is_empty() {
            return Err(Error::InvalidInput("fit needs at least one instance".into()));
        }
        if schedule.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        let kind = instances[0].loss_kind();
        for instance in instances {
            self.check_instance(instance)?;
            if instance.loss_kind() != kind {
                return Err(Error::InvalidInput("fit instances mix training objectives".into()));
            }
        }
        let params = ParamsAdamW {
            lr: schedule.learning_rate,
            weight_decay: schedule.weight_decay,
            ..ParamsAdamW::default()
        };
        let vars = self.params.varmap.all_vars();
        let mut optimizer = AdamW::new(vars.clone(), params).map_err(backend_err)?;
        let rng = DropoutRng::new(derive_seed(schedule.seed, u64::MAX));
        let per_epoch = instances.len().div_ceil(schedule.batch_size);
        let planned = (schedule.epochs * per_epoch).min(schedule.max_steps.unwrap_or(usize::MAX));
        let mut epoch_losses = Vec::with_capacity(schedule.epochs);
        let mut steps = 0;
        'epochs: for epoch in 0..schedule.epochs {
            let order = shuffled_indices(instances.len(), derive_seed(schedule.seed, epoch as u64));
            let mut total = 0.0;
            let mut counted = 0;
            for chunk in order.chunks(schedule.batch_size) {
                if schedule.max_steps.is_some_and(|m| steps >= m) {
                    break 'epochs;
                }
                let batch: Vec<&TrainingInstance> = chunk.iter().map(|&i| &instances[i]).collect();
                let Some(loss) = self.batch_loss(&batch, Some(&rng))? else { continue };
                let value = loss.to_scalar::<f32>().map_err(backend_err)? as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {value} at epoch {epoch}, step {steps} (lr {})",
                        schedule.learning_rate
                    )));
                }
                if schedule.linear_decay {
                    let remaining = planned.saturating_sub(steps) as f64 / planned.max(1) as f64;
                    optimizer.set_learning_rate(schedule.learning_rate * remaining);
                }
                let mut grads = loss.backward().map_err(backend_err)?;
                if let Some(max_norm) = schedule.max_grad_norm {
                    clip_grad_norm(&vars, &mut grads, max_norm).map_err(backend_err)?;
                }
                optimizer.step(&grads).map_err(backend_err)?;
                total += value * batch.len() as f64;
                counted += batch.len();
                steps += 1;
            }
            if counted > 0 {
                epoch_losses.push(total / counted as f64);
                debug!(epoch, loss = total / counted as f64, "epoch done");
            }
        }
        self.fitted = true;
        Ok(FitReport { epoch_losses, steps })
    }

    fn is_fitted(&self) -> bool {
        self.fitted
    }

    fn vocabulary(&self) -> Option<&dyn Vocabulary> {
        Some(&self.codec)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        save_checkpoint(&self.params.varmap, self.config.model.arch, &dir.join("model.safetensors"))?;
        let mut config = self.config.raw.clone();
        if let Network::Pair { .. } = self.network {
            config["id2label"] = serde_json::json!({"0": "positive", "1": "negative", "2": "neutral"});
            config["label2id"] = serde_json::json!({"positive": 0, "negative": 1, "neutral": 2});
        }
        config[FITTED_KEY] = serde_json::Value::Bool(self.fitted);
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config)?).map_err(|e| Error::file(&path, e))?;
        self.codec
            .tokenizer()
            .save(dir.join("tokenizer.json"), true)
            .map_err(|e| Error::Backend(format!("tokenizer: {e}")))
    }
}
