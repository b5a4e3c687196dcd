//! Acceptance checks. Each criterion prints one `PASS` or `FAIL` line.
//!
//! Criteria that need the official SemEval-2014 files or pretrained
//! checkpoints read them from `ATSC_SEMEVAL_DIR`, `ATSC_NLI_MODEL` and
//! `ATSC_MLM_MODEL`; the 16-shot NLI grid also needs `ATSC_ACCEPTANCE_FULL=1`.
//! Without them the line reads `FAIL ... not evaluated` and names what is
//! missing. Only evaluated failures fail the test.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use atsc_core::backend::{
    Backend, BackendDescriptor, BackendEntry, BackendFactory, BackendFamily, BackendRegistry, FitReport,
    LoadOptions, NliLogits, TokenDistribution, TrainingInstance, TrainingSchedule,
};
use atsc_core::config::SemevalFile;
use atsc_core::corpus::{parse_semeval, preprocess, sample_few_shot, ClassCounts, FewShotSpec, LabeledExample, ShotCount};
use atsc_core::experiments::{
    aspect_ablation, evaluate, run_grid, AspectReplacement, DataStore, DomainPair, ExperimentContext, GridSpec,
    RunConfig, RunResult, Split, DEFAULT_SEEDS,
};
use atsc_core::heads::{combine_nli, lm_predict, ClassDistribution, HeadKind, HeadSetup, NliScoring};
use atsc_core::metrics::score;
use atsc_core::pos::{LexiconTagger, PosTag, PosTagger};
use atsc_core::pretrain::{apply_masking, masked_lm_instances, CandidateWord, Corruption, MaskingOptions};
use atsc_core::prompting::{AspectAliases, PromptMode, PromptTemplate, TemplateSet, Verbalizer};
use atsc_core::{AspectKind, Domain, Polarity, Task};
use atsc_neural::scratch::{vocabulary_from_texts, write_scratch_model, ScratchSpec};
use atsc_neural::CandleFactory;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEMEVAL_DIR: &str = "ATSC_SEMEVAL_DIR";
const NLI_MODEL: &str = "ATSC_NLI_MODEL";
const MLM_MODEL: &str = "ATSC_MLM_MODEL";
const FULL: &str = "ATSC_ACCEPTANCE_FULL";

const TEMPLATES: [&str; 3] = ["felt_was", "made_me_feel", "is"];

enum Outcome {
    Pass(String),
    Fail(String),
    NotEvaluated(String),
}

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn load_store(dir: &Path) -> anyhow::Result<DataStore> {
    let mut store = DataStore::default();
    for file in SemevalFile::standard_set() {
        let path = dir.join(&file.path);
        let xml = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let examples = preprocess(&parse_semeval(&xml, file.task)?, file.domain);
        store.insert(file.domain, file.task, file.split, examples);
    }
    Ok(store)
}

/// Owns everything an [`ExperimentContext`] borrows.
struct Bench {
    registry: BackendRegistry,
    factory: CandleFactory,
    templates: TemplateSet,
    verbalizer: Verbalizer,
    aliases: AspectAliases,
    schedule: TrainingSchedule,
}

impl Bench {
    fn new(entries: Vec<BackendEntry>, schedule: TrainingSchedule) -> anyhow::Result<Self> {
        let mut registry = BackendRegistry::default();
        for entry in entries {
            registry.register(entry)?;
        }
        Ok(Bench {
            registry,
            factory: CandleFactory,
            templates: TemplateSet::default(),
            verbalizer: Verbalizer::default(),
            aliases: AspectAliases::default(),
            schedule,
        })
    }

    fn ctx<'a>(&'a self, data: &'a DataStore) -> ExperimentContext<'a> {
        ExperimentContext {
            data,
            registry: &self.registry,
            factory: &self.factory,
            templates: &self.templates,
            verbalizer: &self.verbalizer,
            aliases: &self.aliases,
            schedule: &self.schedule,
        }
    }

    fn load(&self, family: BackendFamily, head: HeadKind) -> anyhow::Result<Box<dyn Backend>> {
        let entry = self.registry.find(&BackendDescriptor::generic(family))?;
        Ok(self.factory.load(
            entry,
            LoadOptions {
                seed: 0,
                readout: head.readout(),
            },
        )?)
    }
}

fn generic(family: BackendFamily, path: PathBuf) -> BackendEntry {
    BackendEntry {
        descriptor: BackendDescriptor::generic(family),
        path,
        options: Default::default(),
    }
}

/// Learning setup for the small scratch checkpoints.
fn scratch_schedule() -> TrainingSchedule {
    TrainingSchedule {
        epochs: 20,
        batch_size: 4,
        learning_rate: 3e-3,
        weight_decay: 0.0,
        seed: 0,
        max_steps: None,
        linear_decay: true,
        max_grad_norm: Some(1.0),
    }
}

/// State shared between criteria.
struct Session {
    scratch_dir: tempfile::TempDir,
    scratch: Vec<BackendEntry>,
    words: Vec<String>,
    fixture_data: DataStore,
    official: Option<DataStore>,
    nli_few_shot: Option<Vec<RunResult>>,
}

impl Session {
    fn new() -> anyhow::Result<Self> {
        let scratch_dir = tempfile::tempdir()?;
        let mut texts = vec!["i felt the was were are made me feel is good bad ok things".to_string()];
        for file in SemevalFile::standard_set() {
            texts.push(fs::read_to_string(fixtures().join("semeval").join(&file.path))?);
        }
        texts.push(SENTENCE_WORDS.iter().flat_map(|(_, ws)| ws.iter()).copied().collect::<Vec<_>>().join(" "));
        let words = vocabulary_from_texts(texts.iter().map(String::as_str));
        let mut scratch = Vec::new();
        for family in BackendFamily::ALL {
            let dir = scratch_dir.path().join(family.as_str());
            write_scratch_model(&dir, &ScratchSpec::tiny(family, 11), &words)?;
            scratch.push(generic(family, dir));
        }
        let official = match env_path(SEMEVAL_DIR) {
            Some(dir) => Some(load_store(&dir)?),
            None => None,
        };
        Ok(Session {
            scratch_dir,
            scratch,
            words,
            fixture_data: load_store(&fixtures().join("semeval"))?,
            official,
            nli_few_shot: None,
        })
    }

    fn scratch_bench(&self) -> anyhow::Result<Bench> {
        Bench::new(self.scratch.clone(), scratch_schedule())
    }

    /// Official data plus real checkpoints for `families`, or why not.
    fn real_bench(&self, models: &[(BackendFamily, &str)]) -> Result<(Bench, &DataStore), String> {
        let mut missing: Vec<&str> = Vec::new();
        if self.official.is_none() {
            missing.push(SEMEVAL_DIR);
        }
        let mut entries = Vec::new();
        for &(family, key) in models {
            match env_path(key) {
                Some(path) => entries.push(generic(family, path)),
                None => missing.push(key),
            }
        }
        if !missing.is_empty() {
            return Err(format!("{} unset", missing.join(", ")));
        }
        let bench = Bench::new(entries, TrainingSchedule::default()).map_err(|e| e.to_string())?;
        Ok((bench, self.official.as_ref().expect("checked above")))
    }
}

// ---- 1. preprocessing fidelity

#[derive(Debug, PartialEq, Eq)]
struct OracleExample {
    source_id: String,
    text: String,
    aspect: String,
    polarity: String,
}

fn attribute(e: &BytesStart, name: &str) -> anyhow::Result<String> {
    let attr = e
        .try_get_attribute(name)?
        .ok_or_else(|| anyhow!("missing attribute `{name}`"))?;
    Ok(attr.unescape_value()?.into_owned())
}

/// Independent streaming reader of SemEval XML.
fn oracle_parse(xml: &str, task: Task) -> anyhow::Result<Vec<OracleExample>> {
    let (record, surface) = match task {
        Task::Atsc => ("aspectTerm", "term"),
        Task::Acsc => ("aspectCategory", "category"),
    };
    let mut reader = Reader::from_str(xml);
    let mut out = Vec::new();
    let mut sentence_id = String::new();
    let mut text = String::new();
    let mut in_text = false;
    let mut index = 0;
    loop {
        match reader.read_event()? {
            Event::Start(e) if e.name().as_ref() == b"sentence" => {
                sentence_id = attribute(&e, "id")?;
                text.clear();
                index = 0;
            }
            Event::Start(e) if e.name().as_ref() == b"text" => in_text = true,
            Event::End(e) if e.name().as_ref() == b"text" => in_text = false,
            Event::Text(t) if in_text => text.push_str(&t.unescape()?),
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == record.as_bytes() => {
                let polarity = attribute(&e, "polarity")?;
                if polarity != "conflict" {
                    out.push(OracleExample {
                        source_id: format!("{sentence_id}#{index}"),
                        text: text.clone(),
                        aspect: attribute(&e, surface)?,
                        polarity,
                    });
                }
                index += 1;
            }
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

/// Compares library and oracle output on every standard file in `dir`.
fn oracle_agreement(dir: &Path, store: &DataStore) -> anyhow::Result<Result<usize, String>> {
    let mut total = 0;
    for file in SemevalFile::standard_set() {
        let xml = fs::read_to_string(dir.join(&file.path))?;
        let expected = oracle_parse(&xml, file.task)?;
        let actual: Vec<OracleExample> = store
            .get(file.domain, file.task, file.split)?
            .iter()
            .map(|e| OracleExample {
                source_id: e.source_id.clone(),
                text: e.text.clone(),
                aspect: e.aspect.clone(),
                polarity: e.polarity.to_string(),
            })
            .collect();
        if actual != expected {
            let first = actual.iter().zip(&expected).position(|(a, b)| a != b);
            return Ok(Err(format!(
                "{}: {} examples vs oracle {}, first difference at {first:?}",
                file.record_name(),
                actual.len(),
                expected.len()
            )));
        }
        total += actual.len();
    }
    Ok(Ok(total))
}

fn preprocessing_fidelity(session: &mut Session) -> anyhow::Result<Outcome> {
    let fixture_total = match oracle_agreement(&fixtures().join("semeval"), &session.fixture_data)? {
        Ok(n) => n,
        Err(diff) => return Ok(Outcome::Fail(format!("fixtures disagree with the oracle: {diff}"))),
    };
    let (Some(dir), Some(store)) = (env_path(SEMEVAL_DIR), session.official.as_ref()) else {
        return Ok(Outcome::NotEvaluated(format!(
            "official counts need {SEMEVAL_DIR}; oracle agrees on {fixture_total} fixture examples"
        )));
    };
    if let Err(diff) = oracle_agreement(&dir, store)? {
        return Ok(Outcome::Fail(format!("official files disagree with the oracle: {diff}")));
    }
    let acsc = ClassCounts::of(&store.get(Domain::Restaurants, Task::Acsc, Split::Test)?);
    let rest = store.get(Domain::Restaurants, Task::Atsc, Split::Test)?.len();
    let lap = store.get(Domain::Laptops, Task::Atsc, Split::Test)?.len();
    let detail = format!(
        "ACSC {} ({}/{}/{}), ATSC restaurants {rest}, laptops {lap}; oracle agrees",
        acsc.total(),
        acsc.positive,
        acsc.negative,
        acsc.neutral
    );
    let expected = (acsc.total(), acsc.positive, acsc.negative, acsc.neutral, rest, lap) == (973, 657, 222, 94, 1120, 638);
    Ok(if expected { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

// ---- 2, 3, 9. zero-shot reproduction and ablation

/// Mean accuracy and macro F1 (in points) over the three templates.
fn zero_shot_means(ctx: &ExperimentContext, head: HeadKind, domain: Domain) -> anyhow::Result<(f64, f64)> {
    let mut acc = 0.0;
    let mut mf1 = 0.0;
    for template in TEMPLATES {
        let config = RunConfig::new(head, Some(template), domain, FewShotSpec { size: ShotCount::Count(0), seed: 13 });
        let result = ctx.run_one(&config)?;
        acc += pct(result.report.accuracy);
        mf1 += pct(result.report.macro_f1);
    }
    Ok((acc / 3.0, mf1 / 3.0))
}

/// Compares per-domain zero-shot means with reference points.
fn zero_shot_reproduction(
    session: &Session,
    head: HeadKind,
    model: (BackendFamily, &str),
    targets: [(Domain, f64, f64); 2],
    tolerance: f64,
) -> anyhow::Result<Outcome> {
    let (bench, data) = match session.real_bench(&[model]) {
        Ok(b) => b,
        Err(why) => return Ok(Outcome::NotEvaluated(why)),
    };
    let ctx = bench.ctx(data);
    let mut parts = Vec::new();
    let mut ok = true;
    for (domain, acc_ref, mf1_ref) in targets {
        let (acc, mf1) = zero_shot_means(&ctx, head, domain)?;
        ok &= (acc - acc_ref).abs() <= tolerance && (mf1 - mf1_ref).abs() <= tolerance;
        parts.push(format!("{domain} {acc:.2}/{mf1:.2} (ref {acc_ref}/{mf1_ref} ±{tolerance})"));
    }
    let detail = parts.join(", ");
    Ok(if ok { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

fn zero_shot_nli(session: &mut Session) -> anyhow::Result<Outcome> {
    zero_shot_reproduction(
        session,
        HeadKind::Nli,
        (BackendFamily::Nli, NLI_MODEL),
        [(Domain::Laptops, 58.93, 54.91), (Domain::Restaurants, 61.79, 57.93)],
        5.0,
    )
}

fn zero_shot_lm(session: &mut Session) -> anyhow::Result<Outcome> {
    zero_shot_reproduction(
        session,
        HeadKind::LmCloze,
        (BackendFamily::MaskedLm, MLM_MODEL),
        [(Domain::Laptops, 59.20, 38.42), (Domain::Restaurants, 68.04, 36.44)],
        5.0,
    )
}

fn ablation_direction(session: &mut Session) -> anyhow::Result<Outcome> {
    let (bench, data) = match session.real_bench(&[(BackendFamily::Nli, NLI_MODEL)]) {
        Ok(b) => b,
        Err(why) => return Ok(Outcome::NotEvaluated(why)),
    };
    let backend = bench.load(BackendFamily::Nli, HeadKind::Nli)?;
    let mut parts = Vec::new();
    let mut ok = true;
    for domain in Domain::ALL {
        let test = data.get(domain, Task::Atsc, Split::Test)?;
        let mut delta = 0.0;
        for id in TEMPLATES {
            let setup = HeadSetup {
                kind: HeadKind::Nli,
                template: Some(bench.templates.get(id)?),
                verbalizer: &bench.verbalizer,
                scoring: NliScoring::default(),
            };
            delta += aspect_ablation(&setup, backend.as_ref(), &test, &AspectReplacement::default())?.delta_accuracy;
        }
        let delta = pct(delta / 3.0);
        ok &= delta < 0.0;
        parts.push(format!("{domain} {delta:+.2}"));
    }
    let detail = format!("accuracy change with `things`: {}", parts.join(", "));
    Ok(if ok { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

// ---- 4. 16-shot NLI

fn sixteen_shot_grid(head: HeadKind, domain: Domain) -> GridSpec {
    GridSpec {
        heads: vec![head],
        templates: TEMPLATES.iter().map(|t| t.to_string()).collect(),
        sizes: vec![ShotCount::Count(16)],
        seeds: DEFAULT_SEEDS.to_vec(),
        domains: vec![DomainPair { train: domain, test: domain }],
        test_task: Task::Atsc,
        provenance: atsc_core::backend::Provenance::Generic,
        adapted_to: Default::default(),
        scoring: NliScoring::default(),
        epochs: 20,
    }
}

fn few_shot_nli(session: &mut Session) -> anyhow::Result<Outcome> {
    let (bench, data) = match session.real_bench(&[(BackendFamily::Nli, NLI_MODEL)]) {
        Ok(b) => b,
        Err(why) => return Ok(Outcome::NotEvaluated(why)),
    };
    if std::env::var(FULL).as_deref() != Ok("1") {
        return Ok(Outcome::NotEvaluated(format!("{FULL}=1 not set (15 fine-tuning runs)")));
    }
    let outcome = run_grid(&bench.ctx(data), &sixteen_shot_grid(HeadKind::Nli, Domain::Laptops), 1)?;
    if !outcome.failures.is_empty() {
        bail!("{} runs failed: {}", outcome.failures.len(), outcome.failures[0].error);
    }
    let acc = pct(outcome.results.iter().map(|r| r.report.accuracy).sum::<f64>() / outcome.results.len() as f64);
    session.nli_few_shot = Some(outcome.results);
    let detail = format!("laptops mean accuracy {acc:.2} over 15 runs (ref 72.88 ±6)");
    Ok(if (acc - 72.88).abs() <= 6.0 { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

// ---- 5. training-loss regime

/// Fits each scratch backend on the other domain's full training split so
/// the 16-shot runs start from trained weights rather than noise.
/// Scratch stand-in for a pretrained checkpoint: a small model fitted on the
/// other domain's full training split with each head's own objective.
fn warm_start(session: &Session, source: Domain, dir: &Path) -> anyhow::Result<Vec<BackendEntry>> {
    let pool = session.fixture_data.get(source, Task::Atsc, Split::Train)?;
    let heads = [
        (BackendFamily::MaskedLm, HeadKind::LmCloze),
        (BackendFamily::CausalLm, HeadKind::LmNextWord),
        (BackendFamily::Nli, HeadKind::Nli),
        (BackendFamily::PairClassifier, HeadKind::BaselineCls),
    ];
    let mut entries = Vec::new();
    for (family, head) in heads {
        let init = dir.join(format!("{}-init", family.as_str()));
        let spec = ScratchSpec {
            hidden: 64,
            intermediate: 128,
            ..ScratchSpec::tiny(family, 11)
        };
        write_scratch_model(&init, &spec, &session.words)?;
        let bench = Bench::new(vec![generic(family, init)], scratch_schedule())?;
        let mut backend = bench.load(family, head)?;
        let mut instances = Vec::new();
        let templates: Vec<Option<&PromptTemplate>> = if head.uses_template() {
            TEMPLATES.iter().map(|id| bench.templates.get(id).map(Some)).collect::<Result<_, _>>()?
        } else {
            vec![None]
        };
        for template in templates {
            let setup = HeadSetup {
                kind: head,
                template,
                verbalizer: &bench.verbalizer,
                scoring: NliScoring::default(),
            };
            for example in pool.iter() {
                instances.push(setup.training_instance(example)?);
            }
        }
        let schedule = TrainingSchedule {
            epochs: 15,
            batch_size: 16,
            ..scratch_schedule()
        };
        backend.fit(&instances, &schedule)?;
        let path = dir.join(family.as_str());
        backend.save(&path)?;
        entries.push(generic(family, path));
    }
    Ok(entries)
}

/// Lowest epoch loss of a run; the criterion asks whether training reaches the bound.
fn reached_loss(run: &RunResult) -> f64 {
    run.fit.as_ref().and_then(FitReport::min_loss).unwrap_or(f64::INFINITY)
}

fn loss_regime(session: &mut Session) -> anyhow::Result<Outcome> {
    const BOUND: f64 = 1e-2;
    let warm_dir = session.scratch_dir.path().join("warm");
    let bench = Bench::new(warm_start(session, Domain::Restaurants, &warm_dir)?, scratch_schedule())?;
    let ctx = bench.ctx(&session.fixture_data);
    let mut proxy = Vec::new();
    let mut below = 0;
    let mut runs = 0;
    for head in HeadKind::ALL {
        let outcome = run_grid(&ctx, &sixteen_shot_grid(head, Domain::Laptops), 1)?;
        if let Some(f) = outcome.failures.first() {
            bail!("{head} run failed: {}", f.error);
        }
        let worst = outcome.results.iter().map(reached_loss).fold(0.0, f64::max);
        below += outcome.results.iter().filter(|r| reached_loss(r) < BOUND).count();
        runs += outcome.results.len();
        proxy.push(format!("{head} {worst:.1e}"));
    }
    let proxy = format!("scratch proxy {below}/{runs} runs below {BOUND:e}, worst per head {}", proxy.join(", "));

    let Some(results) = &session.nli_few_shot else {
        return Ok(Outcome::NotEvaluated(format!("needs the 16-shot NLI runs of criterion 4; {proxy}")));
    };
    let worst = results.iter().map(reached_loss).fold(0.0, f64::max);
    let detail = format!("pretrained NLI worst {worst:.2e} over {} runs; {proxy}", results.len());
    Ok(if worst < BOUND { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

// ---- 6. metric oracle

fn metric_oracle(_: &mut Session) -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        // Skewed class weights so absent classes occur.
        let weights: [u32; 3] = [rng.random_range(0..4), rng.random_range(0..4), rng.random_range(1..4)];
        let draw = |rng: &mut ChaCha8Rng| {
            let total: u32 = weights.iter().sum();
            let mut r = rng.random_range(0..total);
            for (i, &w) in weights.iter().enumerate() {
                if r < w {
                    return Polarity::ALL[i];
                }
                r -= w;
            }
            unreachable!()
        };
        let gold: Vec<Polarity> = (0..n).map(|_| draw(&mut rng)).collect();
        let predicted: Vec<Polarity> = (0..n)
            .map(|i| if rng.random_bool(0.6) { gold[i] } else { *Polarity::ALL.choose(&mut rng).unwrap() })
            .collect();
        let report = score(&gold, &predicted)?;

        let count = |g: Polarity, p: Polarity| gold.iter().zip(&predicted).filter(|&(&a, &b)| a == g && b == p).count();
        let correct = gold.iter().zip(&predicted).filter(|(a, b)| a == b).count();
        if report.accuracy != correct as f64 / n as f64 {
            return Ok(Outcome::Fail(format!("case {case}: accuracy {} vs {correct}/{n}", report.accuracy)));
        }
        for (gi, &g) in Polarity::ALL.iter().enumerate() {
            for (pi, &p) in Polarity::ALL.iter().enumerate() {
                if report.confusion[gi][pi] != count(g, p) {
                    return Ok(Outcome::Fail(format!("case {case}: confusion[{g}][{p}] differs")));
                }
            }
        }
        for &c in &Polarity::ALL {
            let tp = count(c, c);
            let predicted_c = predicted.iter().filter(|&&p| p == c).count();
            let gold_c = gold.iter().filter(|&&g| g == c).count();
            let expected = if predicted_c + gold_c == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (predicted_c + gold_c) as f64
            };
            if report.f1(c) != expected {
                return Ok(Outcome::Fail(format!("case {case}: F1({c}) {} vs {expected}", report.f1(c))));
            }
            let precision = if predicted_c == 0 { 0.0 } else { tp as f64 / predicted_c as f64 };
            let recall = if gold_c == 0 { 0.0 } else { tp as f64 / gold_c as f64 };
            let harmonic = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            if (report.f1(c) - harmonic).abs() > 1e-12 {
                return Ok(Outcome::Fail(format!("case {case}: F1({c}) {} vs 2PR/(P+R) {harmonic}", report.f1(c))));
            }
        }
        let mean = Polarity::ALL.iter().map(|&c| report.f1(c)).sum::<f64>() / 3.0;
        if (report.macro_f1 - mean).abs() > 4.0 * f64::EPSILON {
            return Ok(Outcome::Fail(format!("case {case}: macro F1 {} vs mean {mean}", report.macro_f1)));
        }
    }
    Ok(Outcome::Pass("1000 random label sequences match the brute-force reference".into()))
}

// ---- 7. head invariants

/// Masked LM that puts `other_mass` outside the label words.
struct SpreadBackend {
    descriptor: BackendDescriptor,
    label_probs: [f64; 3],
    other_mass: f64,
}

impl Backend for SpreadBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn mask_fill(&self, _text: &str, _candidates: Option<&[&str]>) -> atsc_core::Result<TokenDistribution> {
        let scale = 1.0 - self.other_mass;
        let mut entries: std::collections::BTreeMap<String, f64> = Verbalizer::default()
            .words()
            .iter()
            .zip(self.label_probs)
            .map(|(w, p)| (w.to_string(), p * scale))
            .collect();
        entries.insert("meh".into(), self.other_mass * 0.25);
        entries.insert("great".into(), self.other_mass * 0.75);
        Ok(TokenDistribution {
            entries,
            restricted: false,
        })
    }

    fn fit(&mut self, _: &[TrainingInstance], _: &TrainingSchedule) -> atsc_core::Result<FitReport> {
        unimplemented!("scoring only")
    }

    fn is_fitted(&self) -> bool {
        false
    }
}

fn distribution_sum(d: &ClassDistribution) -> f64 {
    d.positive + d.negative + d.neutral
}

fn head_invariants(session: &mut Session) -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut check_sum = |d: &ClassDistribution| worst_sum = worst_sum.max((distribution_sum(d) - 1.0).abs());

    // Out-of-label mass.
    let example = LabeledExample {
        text: "The screen is bright.".into(),
        aspect: "screen".into(),
        polarity: Polarity::Positive,
        domain: Domain::Laptops,
        aspect_kind: AspectKind::Term,
        source_id: "x".into(),
    };
    let template = PromptTemplate::felt_was();
    let verbalizer = Verbalizer::default();
    for case in 0..1000 {
        let raw: [f64; 3] = [rng.random_range(1e-6..1.0), rng.random_range(1e-6..1.0), rng.random_range(1e-6..1.0)];
        let total: f64 = raw.iter().sum();
        let label_probs = raw.map(|x| x / total);
        let predict = |other_mass| {
            let backend = SpreadBackend {
                descriptor: BackendDescriptor::generic(BackendFamily::MaskedLm),
                label_probs,
                other_mass,
            };
            lm_predict(&example, &template, &verbalizer, &backend, PromptMode::Cloze)
        };
        let base = predict(0.0)?;
        let spread = predict(rng.random_range(0.0..0.999))?;
        check_sum(&base);
        check_sum(&spread);
        let gap = (base.positive - spread.positive)
            .abs()
            .max((base.negative - spread.negative).abs())
            .max((base.neutral - spread.neutral).abs());
        if gap > 1e-12 {
            return Ok(Outcome::Fail(format!("case {case}: out-of-label mass moved lm_predict by {gap:e}")));
        }
    }

    // Hypothesis order.
    for case in 0..1000 {
        let mut logits = || NliLogits {
            entail: rng.random_range(-8.0..8.0),
            neutral: rng.random_range(-8.0..8.0),
            contradict: rng.random_range(-8.0..8.0),
        };
        let (first, second) = (logits(), logits());
        for scoring in [NliScoring::ProbabilityArgmax, NliScoring::LogitSoftmax] {
            let forward = combine_nli(&first, &second, scoring)?;
            let swapped = combine_nli(&second, &first, scoring)?;
            check_sum(&forward);
            check_sum(&swapped);
            let gap = (forward.neutral - swapped.neutral)
                .abs()
                .max((forward.positive - swapped.negative).abs())
                .max((forward.negative - swapped.positive).abs());
            if gap > 1e-12 {
                return Ok(Outcome::Fail(format!("case {case}: neutral depends on hypothesis order ({gap:e})")));
            }
        }
    }

    // Verbalizer bijection.
    let pool = ["good", "bad", "ok", "great", "awful", "fine", "nice", "poor", "meh", "decent"];
    for case in 0..1000 {
        let words: Vec<&str> = pool.choose_multiple(&mut rng, 3).copied().collect();
        let v = Verbalizer::new(words[0], words[1], words[2])?;
        for p in Polarity::ALL {
            if v.unverbalize(v.verbalize(p))? != p {
                return Ok(Outcome::Fail(format!("case {case}: {p} does not round-trip")));
            }
        }
        for w in v.words() {
            if v.verbalize(v.unverbalize(w)?) != w {
                return Ok(Outcome::Fail(format!("case {case}: `{w}` does not round-trip")));
            }
        }
        if Verbalizer::new(words[0], words[0], words[2]).is_ok() {
            return Ok(Outcome::Fail("a verbalizer with a repeated word was accepted".into()));
        }
    }

    // Real heads on scratch checkpoints.
    let bench = session.scratch_bench()?;
    let test = session.fixture_data.get(Domain::Laptops, Task::Atsc, Split::Test)?;
    let train = session.fixture_data.get(Domain::Laptops, Task::Atsc, Split::Train)?;
    let mut scored = 0;
    for head in HeadKind::ALL {
        for scoring in [NliScoring::ProbabilityArgmax, NliScoring::LogitSoftmax] {
            if scoring == NliScoring::LogitSoftmax && head != HeadKind::Nli {
                continue;
            }
            let template = head.uses_template().then(|| bench.templates.get("is")).transpose()?;
            let setup = HeadSetup {
                kind: head,
                template,
                verbalizer: &bench.verbalizer,
                scoring,
            };
            let mut backend = bench.load(head.family(), head)?;
            if head.is_baseline() {
                let instances = train[..8].iter().map(|e| setup.training_instance(e)).collect::<Result<Vec<_>, _>>()?;
                backend.fit(&instances, &TrainingSchedule { epochs: 1, ..scratch_schedule() })?;
            }
            let (predictions, _) = evaluate(&setup, backend.as_ref(), &test, &bench.aliases)?;
            for p in &predictions {
                check_sum(&p.distribution);
            }
            scored += predictions.len();
        }
    }
    let detail = format!(
        "worst |sum - 1| {worst_sum:.1e} over {scored} scratch predictions and 5000 synthetic cases; \
         mass, order and bijection checks hold"
    );
    Ok(if worst_sum <= 1e-6 { Outcome::Pass(detail) } else { Outcome::Fail(detail) })
}

// ---- 8. determinism

fn determinism(session: &mut Session) -> anyhow::Result<Outcome> {
    let bench = session.scratch_bench()?;
    let ctx = bench.ctx(&session.fixture_data);
    for head in [HeadKind::LmCloze, HeadKind::LmNextWord, HeadKind::Nli] {
        let mut reference = None;
        for seed in DEFAULT_SEEDS {
            let config = RunConfig::new(head, Some("made_me_feel"), Domain::Restaurants, FewShotSpec { size: ShotCount::Count(0), seed });
            let predictions = serde_json::to_vec(&ctx.run_one(&config)?.predictions)?;
            match &reference {
                None => reference = Some(predictions),
                Some(r) if *r != predictions => {
                    return Ok(Outcome::Fail(format!("{head} zero-shot predictions change with seed {seed}")));
                }
                Some(_) => {}
            }
        }
    }

    let pool = session.fixture_data.get(Domain::Laptops, Task::Atsc, Split::Train)?;
    let mut subsets = BTreeSet::new();
    for seed in DEFAULT_SEEDS {
        for size in [16, 64] {
            let spec = FewShotSpec { size: ShotCount::Count(size), seed };
            let first = serde_json::to_vec(&sample_few_shot(&pool, spec)?)?;
            let again = serde_json::to_vec(&sample_few_shot(&pool, spec)?)?;
            if first != again {
                return Ok(Outcome::Fail(format!("sample_few_shot differs on repeat for seed {seed}, size {size}")));
            }
            subsets.insert(first);
        }
    }
    if subsets.len() != 2 * DEFAULT_SEEDS.len() {
        return Ok(Outcome::Fail("distinct seeds drew identical subsets".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..500 {
        let n = rng.random_range(0..40);
        let candidates: Vec<CandidateWord> = (0..n)
            .map(|i| CandidateWord {
                word: 2 * i,
                pieces: (0..rng.random_range(1..4)).map(|k| 3 * i + k).collect(),
            })
            .collect();
        let seed = rng.random();
        let first = serde_json::to_vec(&apply_masking(candidates.clone(), 0.15, seed))?;
        let again = serde_json::to_vec(&apply_masking(candidates, 0.15, seed))?;
        if first != again {
            return Ok(Outcome::Fail(format!("apply_masking differs on repeat (case {case})")));
        }
    }
    Ok(Outcome::Pass(
        "zero-shot predictions identical across 5 seeds for 3 heads; sampling and masking byte-identical per seed"
            .into(),
    ))
}

// ---- 10. masking policy

const SENTENCE_WORDS: [(&str, &[&str]); 6] = [
    ("det", &["the", "a", "this", "that", "my", "our"]),
    ("adj", &["bright", "slow", "quiet", "fresh", "cold", "friendly", "expensive", "tiny", "crisp", "noisy"]),
    ("noun", &["screen", "battery", "waiter", "pasta", "keyboard", "table", "menu", "charger", "dessert", "fan"]),
    ("propn", &["Dell", "Lenovo", "Apple", "Paris", "Windows", "Rome"]),
    ("verb", &["was", "is", "seemed", "felt", "looked", "became"]),
    ("other", &["and", "but", "very", "really", "not", "too", "with", "for"]),
];

fn synthetic_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, class: usize| *SENTENCE_WORDS[class].1.choose(rng).unwrap();
    (0..n)
        .map(|_| {
            let mut words = Vec::new();
            for _ in 0..rng.random_range(1..=12) {
                match rng.random_range(0..4) {
                    0 => words.extend([pick(&mut rng, 0), pick(&mut rng, 2), pick(&mut rng, 4), pick(&mut rng, 1)]),
                    1 => words.extend([pick(&mut rng, 3), pick(&mut rng, 4), pick(&mut rng, 5), pick(&mut rng, 1)]),
                    2 => words.extend([pick(&mut rng, 0), pick(&mut rng, 1), pick(&mut rng, 2)]),
                    _ => words.extend([pick(&mut rng, 5), pick(&mut rng, 3)]),
                }
            }
            let mut s = words.join(" ");
            s.push(if rng.random_bool(0.5) { '.' } else { '!' });
            s
        })
        .collect()
}

fn is_maskable(tag: PosTag) -> bool {
    matches!(tag, PosTag::Adj | PosTag::Noun | PosTag::Propn)
}

/// Checks the masking policy over `sentences` with one backend's tokenizer.
fn masking_policy_with(backend: &dyn Backend, sentences: &[String]) -> anyhow::Result<Result<(usize, usize), String>> {
    let vocabulary = backend.vocabulary().ok_or_else(|| anyhow!("backend exposes no vocabulary"))?;
    let options = MaskingOptions {
        rate: 0.15,
        corruption: Corruption::MaskOnly,
        seed: 10,
    };
    let (instances, stats) = masked_lm_instances(sentences, &LexiconTagger, vocabulary, &options)?;
    if stats.misaligned_sentences != 0 || instances.len() != sentences.len() {
        return Ok(Err(format!("{} sentences could not be aligned", stats.misaligned_sentences)));
    }
    let mut masked_total = 0;
    let mut candidate_total = 0;
    for (i, (sentence, instance)) in sentences.iter().zip(&instances).enumerate() {
        let TrainingInstance::MaskedLm { labels, .. } = instance else {
            bail!("expected a masked-LM instance");
        };
        let tagged = LexiconTagger.tag(sentence);
        let pieces = vocabulary.encode(sentence)?;
        let candidates = tagged.words.iter().filter(|w| is_maskable(w.tag)).count();
        let mut masked_words = BTreeSet::new();
        for (pos, label) in labels.iter().enumerate() {
            if label.is_none() {
                continue;
            }
            let piece = &pieces[pos];
            let Some(w) = tagged.words.iter().position(|w| w.start <= piece.start && piece.end <= w.end) else {
                return Ok(Err(format!("sentence {i}: masked piece {pos} lies outside every word")));
            };
            if !is_maskable(tagged.words[w].tag) {
                return Ok(Err(format!(
                    "sentence {i}: masked `{}` tagged {:?}",
                    tagged.word(w),
                    tagged.words[w].tag
                )));
            }
            masked_words.insert(w);
        }
        let target = (0.15 * candidates as f64).floor() as usize;
        if masked_words.len() + 1 < target || masked_words.len() > target + 1 {
            return Ok(Err(format!(
                "sentence {i}: {} of {candidates} candidates masked, expected {target} ± 1",
                masked_words.len()
            )));
        }
        masked_total += masked_words.len();
        candidate_total += candidates;
    }
    Ok(Ok((masked_total, candidate_total)))
}

fn masking_policy(session: &mut Session) -> anyhow::Result<Outcome> {
    let sentences = synthetic_sentences(1000, 10);
    let bench = session.scratch_bench()?;
    let backend = bench.load(BackendFamily::MaskedLm, HeadKind::LmCloze)?;
    let mut parts = Vec::new();
    match masking_policy_with(backend.as_ref(), &sentences)? {
        Ok((masked, candidates)) => parts.push(format!("word-level: {masked}/{candidates} candidates masked")),
        Err(why) => return Ok(Outcome::Fail(format!("word-level tokenizer: {why}"))),
    }
    if let Some(path) = env_path(MLM_MODEL) {
        let real = Bench::new(vec![generic(BackendFamily::MaskedLm, path)], TrainingSchedule::default())?;
        let backend = real.load(BackendFamily::MaskedLm, HeadKind::LmCloze)?;
        match masking_policy_with(backend.as_ref(), &sentences)? {
            Ok((masked, candidates)) => parts.push(format!("{MLM_MODEL}: {masked}/{candidates} candidates masked")),
            Err(why) => return Ok(Outcome::Fail(format!("{MLM_MODEL} tokenizer: {why}"))),
        }
    }
    Ok(Outcome::Pass(format!("1000 sentences, no non-ADJ/NOUN/PROPN masks; {}", parts.join("; "))))
}

type Check = fn(&mut Session) -> anyhow::Result<Outcome>;

fn main() {
    let criteria: [(u8, &str, Check); 10] = [
        (1, "preprocessing fidelity", preprocessing_fidelity),
        (2, "zero-shot NLI reproduction", zero_shot_nli),
        (3, "zero-shot LM reproduction", zero_shot_lm),
        (4, "16-shot NLI fine-tuning", few_shot_nli),
        (5, "training-loss regime", loss_regime),
        (6, "metric oracle equivalence", metric_oracle),
        (7, "head invariants", head_invariants),
        (8, "determinism", determinism),
        (9, "ablation directionality", ablation_direction),
        (10, "masking policy", masking_policy),
    ];
    let mut session = Session::new().expect("acceptance session");
    let mut failed = Vec::new();
    for (id, title, check) in criteria {
        let line = match check(&mut session) {
            Ok(Outcome::Pass(detail)) => format!("PASS [{id:>2}] {title}: {detail}"),
            Ok(Outcome::NotEvaluated(why)) => format!("FAIL [{id:>2}] {title}: not evaluated, {why}"),
            Ok(Outcome::Fail(detail)) => {
                failed.push(id);
                format!("FAIL [{id:>2}] {title}: {detail}")
            }
            Err(e) => {
                failed.push(id);
                format!("FAIL [{id:>2}] {title}: error: {e:#}")
            }
        };
        println!("{line}");
    }
    if !failed.is_empty() {
        eprintln!("criteria {failed:?} failed");
        std::process::exit(1);
    }
}
