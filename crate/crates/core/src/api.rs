//! Request and response bodies of the HTTP service.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendFamily, Provenance};
use crate::config::SemevalFile;
use crate::corpus::ClassCounts;
use crate::experiments::{GridSpec, RunFailure};
use crate::heads::{ClassDistribution, HeadKind, NliScoring};
use crate::label::{Domain, Polarity};
use crate::metrics::ZTestOptions;
use crate::pretrain::MaskingStats;
use crate::prompting::{HypothesisPair, PromptMode, RenderedPrompt};
use crate::report::Layout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// Error body returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    /// Individual validation problems, when there are several.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    /// Files to read; the configured list when absent.
    #[serde(default)]
    pub files: Option<Vec<SemevalFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedFile {
    pub record: String,
    pub source: PathBuf,
    pub sentences: usize,
    pub examples: usize,
    /// Aspects removed because they carry the `conflict` label.
    pub conflicts_dropped: usize,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub fingerprint: String,
    pub manifest: PathBuf,
    pub files: Vec<IngestedFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRequest {
    pub domain: Domain,
    /// Overrides the configured review cap.
    #[serde(default)]
    pub max_reviews: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusResponse {
    pub fingerprint: String,
    pub path: PathBuf,
    pub reviews: usize,
    pub sentences: usize,
    pub skipped_lines: usize,
    pub other_domains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub template: String,
    pub aspect: String,
    #[serde(default)]
    pub review: String,
    #[serde(default = "default_mode")]
    pub mode: PromptMode,
}

fn default_mode() -> PromptMode {
    PromptMode::Cloze
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub prompt: RenderedPrompt,
    pub hypotheses: HypothesisPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictItem {
    pub text: String,
    pub aspect: String,
}

/// Zero-shot prediction with a loaded backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub head: HeadKind,
    #[serde(default)]
    pub template: Option<String>,
    pub domain: Domain,
    #[serde(default = "default_provenance")]
    pub provenance: Provenance,
    #[serde(default)]
    pub scoring: NliScoring,
    pub items: Vec<PredictItem>,
}

fn default_provenance() -> Provenance {
    Provenance::Generic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPrediction {
    pub label: Polarity,
    pub distribution: ClassDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub backend: String,
    pub predictions: Vec<ItemPrediction>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    /// The configured experiment when absent.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out: PathBuf,
    pub runs: usize,
    pub cells: usize,
    pub fingerprints: Vec<String>,
    pub failures: Vec<RunFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainRequest {
    pub family: BackendFamily,
    pub domain: Domain,
    /// Where the adapted checkpoint goes; `<out>/models/...` when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub max_reviews: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub fingerprint: String,
    pub checkpoint: PathBuf,
    pub sentences: usize,
    pub instances: usize,
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    /// Present for the masked-LM objective.
    pub masking: Option<MaskingStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Csv,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRequest {
    pub layout: Layout,
    #[serde(default)]
    pub format: TableFormat,
    /// Results directory; the configured output directory when absent.
    #[serde(default)]
    pub results: Option<PathBuf>,
    #[serde(default)]
    pub z_test: ZTestOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub path: PathBuf,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub gold: Vec<Polarity>,
    pub predicted: Vec<Polarity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZTestRequest {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub options: ZTestOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub kind: String,
    pub state: JobState,
    /// Operation output once the job succeeded.
    #[serde(default)]
    pub output: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<ApiError>,
}
