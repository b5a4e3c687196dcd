//! Prompt-based aspect sentiment classification: corpus preparation, prompt
//! rendering, scoring heads over pluggable model backends, domain-adaptive
//! pretraining data, experiment grids and reporting.

pub mod api;
pub mod artifact;
pub mod backend;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod fingerprint;
pub mod heads;
pub mod label;
pub mod metrics;
pub mod pos;
pub mod pretrain;
pub mod prompting;
pub mod report;

pub use error::{Error, Result};
pub use label::{AspectKind, Domain, Polarity, RawPolarity, Task};
