//! Transformer backends on candle: BERT-style encoders, RoBERTa and GPT-2.

mod backend;
mod encoder;
mod factory;
mod gpt2;
mod hf_config;
pub mod nn;
pub mod scratch;
pub mod text;
pub mod weights;

pub use backend::{Network, NeuralBackend, NliOrder};
pub use factory::CandleFactory;
pub use hf_config::{Activation, Arch, HfConfig, ModelConfig};
