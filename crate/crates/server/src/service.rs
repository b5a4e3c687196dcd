//! The operations behind each endpoint, as plain blocking calls.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use atsc_core::api::{
    CorpusRequest, CorpusResponse, IngestRequest, IngestResponse, IngestedFile, ItemPrediction, PredictRequest,
    PredictResponse, PretrainRequest, PretrainSummary, RenderRequest, RenderResponse, ReportRequest,
    ReportResponse, RunRequest, RunSummary, ScoreRequest, TableFormat, ZTestRequest,
};
use atsc_core::artifact::{digest, write_atomic};
use atsc_core::backend::{BackendFactory, BackendFamily, BackendRegistry, LoadOptions, TrainingInstance};
use atsc_core::config::{ProjectConfig, SemevalFile};
use atsc_core::corpus::{parse_semeval, prepare_pretrain_corpus, preprocess, read_examples, write_examples, ClassCounts, LabeledExample, PretrainSentence};
use atsc_core::experiments::{read_results, run_grid, write_grid, DataStore, ExperimentContext, Split};
use atsc_core::fingerprint::fingerprint;
use atsc_core::heads::HeadSetup;
use atsc_core::metrics::{score, z_test, EvalReport, SignificanceResult};
use atsc_core::pos::LexiconTagger;
use atsc_core::pretrain::{clm_batches, masked_lm_instances, MaskingOptions};
use atsc_core::prompting::{render, render_hypotheses, TemplateSet};
use atsc_core::report::tabulate;
use atsc_core::{Domain, Error, Result, Task};
use serde::Serialize;
use tracing::info;

const MANIFEST: &str = "manifest.json";

pub struct Service {
    config: ProjectConfig,
    factory: Arc<dyn BackendFactory>,
    registry: BackendRegistry,
    templates: TemplateSet,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn all_record_files() -> impl Iterator<Item = SemevalFile> {
    Domain::ALL.into_iter().flat_map(|domain| {
        [Task::Atsc, Task::Acsc].into_iter().flat_map(move |task| {
            [Split::Train, Split::Test].into_iter().map(move |split| SemevalFile {
                domain,
                task,
                split,
                path: PathBuf::new(),
            })
        })
    })
}

impl Service {
    /// Validates `config`, listing every problem on failure.
    pub fn new(config: ProjectConfig, factory: Arc<dyn BackendFactory>) -> Result<Self> {
        config.validate()?;
        let registry = config.registry()?;
        let templates = config.templates()?;
        Ok(Service {
            config,
            factory,
            registry,
            templates,
        })
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    fn data_dir(&self) -> PathBuf {
        self.config.out.join("data")
    }

    fn corpus_path(&self, domain: Domain) -> PathBuf {
        self.config.out.join("corpus").join(format!("{domain}.jsonl"))
    }

    /// Parses every file before writing anything, so a bad input leaves no
    /// partial output behind.
    pub fn ingest(&self, request: &IngestRequest) -> Result<IngestResponse> {
        let files = match &request.files {
            Some(files) => files.clone(),
            None if self.config.data.semeval.is_empty() => SemevalFile::standard_set(),
            None => self.config.data.semeval.clone(),
        };
        if files.is_empty() {
            return Err(Error::InvalidInput("no SemEval files to ingest".into()));
        }
        let mut parsed = Vec::with_capacity(files.len());
        let mut digests = Vec::with_capacity(files.len());
        for file in &files {
            let source = self.config.semeval_path(file);
            let bytes = fs::read(&source).map_err(|e| Error::file(&source, e))?;
            let raw = parse_semeval(&bytes, file.task)?;
            let examples = preprocess(&raw, file.domain);
            let aspects: usize = raw.iter().map(|s| s.aspects.len()).sum();
            let summary = IngestedFile {
                record: file.record_name(),
                source,
                sentences: raw.len(),
                examples: examples.len(),
                conflicts_dropped: aspects - examples.len(),
                counts: ClassCounts::of(&examples),
            };
            digests.push(digest(&bytes));
            parsed.push((summary, examples));
        }
        let print = fingerprint(&(&files, &digests));
        let dir = self.data_dir();
        create_dir(&dir)?;
        for (summary, examples) in &parsed {
            write_atomic(&dir.join(&summary.record), |w| write_examples(w, examples))?;
        }
        let response = IngestResponse {
            fingerprint: print,
            manifest: dir.join(MANIFEST),
            files: parsed.into_iter().map(|(s, _)| s).collect(),
        };
        write_json(&response.manifest, &response)?;
        info!(fingerprint = %response.fingerprint, files = response.files.len(), "ingested");
        Ok(response)
    }

    /// Loads every preprocessed split present under `<out>/data`.
    pub fn data_store(&self) -> Result<DataStore> {
        let dir = self.data_dir();
        let mut store = DataStore::default();
        let mut found = 0;
        for file in all_record_files() {
            let path = dir.join(file.record_name());
            if !path.is_file() {
                continue;
            }
            let reader = BufReader::new(fs::File::open(&path).map_err(|e| Error::file(&path, e))?);
            store.insert(file.domain, file.task, file.split, read_examples(reader)?);
            found += 1;
        }
        if found == 0 {
            return Err(Error::InvalidInput(format!(
                "no preprocessed data under {}; run ingest first",
                dir.display()
            )));
        }
        Ok(store)
    }

    /// Writes the in-domain sentence stream to `<out>/corpus/<domain>.jsonl`.
    pub fn corpus(&self, request: &CorpusRequest) -> Result<CorpusResponse> {
        let source = self
            .config
            .reviews_path()
            .ok_or_else(|| Error::InvalidInput("no review corpus configured (data.reviews)".into()))?;
        let file = fs::File::open(&source).map_err(|e| Error::file(&source, e))?;
        let size = file.metadata().map_err(|e| Error::file(&source, e))?.len();
        let limit = request.max_reviews.or(self.config.pretrain.max_reviews);
        let mut stream = prepare_pretrain_corpus(BufReader::new(file), request.domain, limit);
        let sentences: Vec<PretrainSentence> = stream.by_ref().collect();
        let path = self.corpus_path(request.domain);
        create_dir(path.parent().expect("corpus dir"))?;
        write_atomic(&path, |w| {
            for s in &sentences {
                serde_json::to_writer(&mut *w, s)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        let response = CorpusResponse {
            fingerprint: fingerprint(&(&source, size, request.domain, limit)),
            path: path.clone(),
            reviews: stream.consumed(),
            sentences: sentences.len(),
            skipped_lines: stream.skipped(),
            other_domains: stream.filtered(),
        };
        write_json(&path.with_extension("manifest.json"), &response)?;
        Ok(response)
    }

    pub fn render(&self, request: &RenderRequest) -> Result<RenderResponse> {
        let template = self.templates.get(&request.template)?;
        Ok(RenderResponse {
            prompt: render(template, &request.aspect, &request.review, request.mode)?,
            hypotheses: render_hypotheses(template, &request.aspect)?,
        })
    }

    /// Scores items with an untrained backend.
    pub fn predict(&self, request: &PredictRequest) -> Result<PredictResponse> {
        let entry = self.registry.resolve(request.head.family(), request.provenance, request.domain)?;
        let backend = self.factory.load(
            entry,
            LoadOptions {
                seed: 0,
                readout: request.head.readout(),
            },
        )?;
        let template = request.template.as_deref().map(|t| self.templates.get(t)).transpose()?;
        let setup = HeadSetup {
            kind: request.head,
            template,
            verbalizer: &self.config.prompts.verbalizer,
            scoring: request.scoring,
        };
        let predictions = request
            .items
            .iter()
            .map(|item| {
                let example = LabeledExample {
                    text: item.text.clone(),
                    aspect: self.config.prompts.aliases.resolve(&item.aspect).to_string(),
                    polarity: atsc_core::Polarity::Neutral,
                    domain: request.domain,
                    aspect_kind: atsc_core::AspectKind::Term,
                    source_id: String::new(),
                };
                let distribution = setup.predict(&example, backend.as_ref())?;
                Ok(ItemPrediction {
                    label: distribution.argmax(),
                    distribution,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PredictResponse {
            backend: entry.descriptor.label(),
            predictions,
        })
    }

    /// Runs a grid and writes its results under the output directory.
    pub fn run(&self, request: &RunRequest) -> Result<RunSummary> {
        let grid = match &request.grid {
            Some(grid) => grid.clone(),
            None => {
                let mut grid = self
                    .config
                    .experiment
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("no experiment configured and none supplied".into()))?;
                grid.seeds = self.config.seeds.clone();
                grid
            }
        };
        grid.validate()?;
        let data = self.data_store()?;
        let ctx = ExperimentContext {
            data: &data,
            registry: &self.registry,
            factory: self.factory.as_ref(),
            templates: &self.templates,
            verbalizer: &self.config.prompts.verbalizer,
            aliases: &self.config.prompts.aliases,
            schedule: &self.config.schedule,
        };
        let workers = request.workers.unwrap_or(self.config.workers);
        let outcome = run_grid(&ctx, &grid, workers)?;
        write_grid(&self.config.out, &outcome)?;
        info!(runs = outcome.results.len(), failures = outcome.failures.len(), "grid finished");
        Ok(RunSummary {
            out: self.config.out.clone(),
            runs: outcome.results.len(),
            cells: outcome.cells.len(),
            fingerprints: outcome.results.iter().map(|r| r.fingerprint.clone()).collect(),
            failures: outcome.failures,
        })
    }

    /// Continues a generic backend's self-supervised objective on the
    /// in-domain corpus and saves the adapted checkpoint.
    pub fn pretrain(&self, request: &PretrainRequest) -> Result<PretrainSummary> {
        let corpus = self.corpus_path(request.domain);
        let reader = BufReader::new(fs::File::open(&corpus).map_err(|e| Error::file(&corpus, e))?);
        let mut sentences = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sentence: PretrainSentence = serde_json::from_str(&line)?;
            sentences.push(sentence.text);
            if request.max_reviews.is_some_and(|m| sentences.len() >= m) {
                break;
            }
        }
        if sentences.is_empty() {
            return Err(Error::InvalidInput(format!("{} holds no sentences", corpus.display())));
        }
        let entry = self.registry.resolve(request.family, atsc_core::backend::Provenance::Generic, request.domain)?;
        let settings = &self.config.pretrain;
        let print = fingerprint(&(request, &entry.path, settings, digest(&fs::read(&corpus)?)));
        let mut backend = self.factory.load(
            entry,
            LoadOptions {
                seed: settings.schedule.seed,
                readout: None,
            },
        )?;
        let vocabulary = backend
            .vocabulary()
            .ok_or_else(|| Error::InvalidInput(format!("{} exposes no vocabulary", entry.descriptor.label())))?;
        let (instances, masking): (Vec<TrainingInstance>, _) = match request.family {
            BackendFamily::MaskedLm => {
                let options = MaskingOptions {
                    rate: settings.mask_rate,
                    corruption: settings.corruption,
                    seed: settings.schedule.seed,
                };
                let (instances, stats) = masked_lm_instances(&sentences, &LexiconTagger, vocabulary, &options)?;
                (instances, Some(stats))
            }
            BackendFamily::CausalLm => {
                let sequences = sentences
                    .iter()
                    .map(|s| Ok(vocabulary.encode(s)?.into_iter().map(|p| p.id).collect()))
                    .collect::<Result<Vec<Vec<u32>>>>()?;
                let window = settings.window.min(vocabulary.max_len());
                let eos = vocabulary.eos_id();
                let pad = vocabulary.pad_id();
                (clm_batches(&sequences, window, eos, pad, settings.schedule.seed)?, None)
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "{} backends have no self-supervised objective",
                    other.as_str()
                )))
            }
        };
        let fit = backend.fit(&instances, &settings.schedule)?;
        let checkpoint = request.output.clone().unwrap_or_else(|| {
            self.config
                .out
                .join("models")
                .join(format!("{}-{}-{print}", request.family.as_str(), request.domain))
        });
        backend.save(&checkpoint)?;
        let summary = PretrainSummary {
            fingerprint: print,
            checkpoint: checkpoint.clone(),
            sentences: sentences.len(),
            instances: instances.len(),
            steps: fit.steps,
            epoch_losses: fit.epoch_losses,
            masking,
        };
        write_json(&checkpoint.join("atsc-pretrain.json"), &summary)?;
        Ok(summary)
    }

    /// Renders a table and writes it to `<results>/reports/<layout>.<ext>`.
    pub fn report(&self, request: &ReportRequest) -> Result<ReportResponse> {
        let results = request.results.clone().unwrap_or_else(|| self.config.out.clone());
        let index = read_results(&results)?;
        let table = tabulate(&index.runs, request.layout, request.z_test)?;
        let (body, ext) = match request.format {
            TableFormat::Csv => (table.to_csv()?, "csv"),
            TableFormat::Text => (table.to_text(), "txt"),
        };
        let dir = results.join("reports");
        create_dir(&dir)?;
        let path = dir.join(format!("{}.{ext}", request.layout));
        write_atomic(&path, |w| Ok(w.write_all(body.as_bytes())?))?;
        let mut runs: Vec<&str> = index.runs.iter().map(|r| r.fingerprint.as_str()).collect();
        runs.sort_unstable();
        let manifest = serde_json::json!({
            "fingerprint": fingerprint(&(&runs, request)),
            "layout": request.layout,
            "runs": runs,
        });
        write_json(&dir.join(format!("{}.{ext}.manifest.json", request.layout)), &manifest)?;
        Ok(ReportResponse { path, body })
    }

    pub fn score(&self, request: &ScoreRequest) -> Result<EvalReport> {
        score(&request.gold, &request.predicted)
    }

    pub fn z_test(&self, request: &ZTestRequest) -> Result<SignificanceResult> {
        z_test(&request.a, &request.b, request.options)
    }
}
