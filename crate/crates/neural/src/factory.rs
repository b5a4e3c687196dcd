//! Factory that turns registry entries into candle backends.

use atsc_core::backend::{Backend, BackendEntry, BackendFactory, LoadOptions};
use atsc_core::Result;

use crate::backend::NeuralBackend;

/// Loads Hugging Face style checkpoints on the CPU.
#[derive(Debug, Clone, Copy, Default)]
pub struct CandleFactory;

impl BackendFactory for CandleFactory {
    fn load(&self, entry: &BackendEntry, options: LoadOptions) -> Result<Box<dyn Backend>> {
        Ok(Box::new(NeuralBackend::load(entry, options)?))
    }
}
