#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use atsc_core::backend::{
    Backend, BackendDescriptor, BackendEntry, BackendFactory, BackendFamily, BackendRegistry, FitReport,
    LoadOptions, NliLogits, PairLogits, TokenDistribution, TrainingInstance, TrainingSchedule,
};
use atsc_core::corpus::LabeledExample;
use atsc_core::experiments::{DataStore, Split};
use atsc_core::{AspectKind, Domain, Polarity, Result, Task};

/// Everything the mock factory observed.
#[derive(Debug, Default)]
pub struct Journal {
    pub loads: Vec<(String, u64)>,
    pub fits: Vec<(Vec<TrainingInstance>, TrainingSchedule)>,
}

/// Keyword scorer: "great" favours good/positive, "awful" favours bad/negative.
/// After fitting, every score is nudged by `bias` so trained runs differ.
pub struct KeywordBackend {
    descriptor: BackendDescriptor,
    path: String,
    bias: f64,
    fitted: bool,
    journal: Arc<Mutex<Journal>>,
}

fn cue(text: &str) -> f64 {
    let t = text.to_lowercase();
    match (t.contains("great"), t.contains("awful")) {
        (true, false) => 1.0,
        (false, true) => -1.0,
        _ => 0.0,
    }
}

impl Backend for KeywordBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn mask_fill(&self, text: &str, candidates: Option<&[&str]>) -> Result<TokenDistribution> {
        let c = cue(text);
        let raw = [("good", 1.0 + c), ("bad", 1.0 - c), ("ok", 0.8), ("the", 5.0)];
        let entries = raw
            .iter()
            .filter(|(w, _)| candidates.is_none_or(|cs| cs.contains(w)))
            .map(|(w, s)| (w.to_string(), s / 7.8))
            .collect();
        Ok(TokenDistribution {
            entries,
            restricted: candidates.is_some(),
        })
    }

    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliLogits> {
        let c = cue(premise);
        let sign = if hypothesis.contains("good") { 1.0 } else { -1.0 };
        // Hypotheses that mention a word of the premise get more confident.
        let grounded = hypothesis
            .split_whitespace()
            .skip(1)
            .take(1)
            .any(|w| premise.to_lowercase().contains(&w.to_lowercase()));
        let scale = if grounded { 2.0 } else { 0.5 };
        Ok(NliLogits {
            entail: scale * sign * c + self.bias,
            neutral: 0.3,
            contradict: -scale * sign * c,
        })
    }

    fn pair_classify(&self, text: &str, _aspect: &str) -> Result<PairLogits> {
        let c = cue(text);
        Ok(PairLogits {
            scores: [c + self.bias, -c, 0.1],
        })
    }

    fn fit(&mut self, instances: &[TrainingInstance], schedule: &TrainingSchedule) -> Result<FitReport> {
        self.journal.lock().unwrap().fits.push((instances.to_vec(), schedule.clone()));
        self.fitted = true;
        self.bias = 0.01 * (schedule.seed % 7) as f64;
        let losses = (0..schedule.epochs).map(|e| 1.0 / (1.0 + e as f64)).collect();
        Ok(FitReport {
            epoch_losses: losses,
            steps: schedule.epochs,
        })
    }

    fn is_fitted(&self) -> bool {
        self.fitted
    }
}

pub struct MockFactory {
    pub journal: Arc<Mutex<Journal>>,
    /// Loads with this seed fail.
    pub failing_seed: Option<u64>,
}

impl MockFactory {
    pub fn new() -> Self {
        MockFactory {
            journal: Arc::default(),
            failing_seed: None,
        }
    }
}

impl BackendFactory for MockFactory {
    fn load(&self, entry: &BackendEntry, options: LoadOptions) -> Result<Box<dyn Backend>> {
        if self.failing_seed == Some(options.seed) {
            return Err(atsc_core::Error::Backend("simulated load failure".into()));
        }
        let path = entry.path.display().to_string();
        self.journal.lock().unwrap().loads.push((path.clone(), options.seed));
        Ok(Box::new(KeywordBackend {
            descriptor: entry.descriptor.clone(),
            path,
            bias: 0.0,
            fitted: false,
            journal: self.journal.clone(),
        }))
    }
}

pub fn registry() -> BackendRegistry {
    let mut registry = BackendRegistry::default();
    let mut add = |descriptor: BackendDescriptor, path: &str| {
        registry
            .register(BackendEntry {
                descriptor,
                path: path.into(),
                options: Default::default(),
            })
            .unwrap();
    };
    for family in [BackendFamily::MaskedLm, BackendFamily::Nli, BackendFamily::PairClassifier] {
        add(BackendDescriptor::generic(family), &format!("generic-{}", family.as_str()));
    }
    for domain in Domain::ALL {
        add(
            BackendDescriptor::domain_adapted(BackendFamily::MaskedLm, domain),
            &format!("adapted-{domain}"),
        );
    }
    registry
}

fn example(i: usize, domain: Domain, kind: AspectKind) -> LabeledExample {
    let (word, polarity) = match i % 3 {
        0 => ("great", Polarity::Positive),
        1 => ("awful", Polarity::Negative),
        _ => ("fine", Polarity::Neutral),
    };
    let aspect = match kind {
        AspectKind::Term => format!("part{i}"),
        AspectKind::Category => "food".to_string(),
    };
    LabeledExample {
        text: format!("The part{i} was {word} here."),
        aspect,
        polarity,
        domain,
        aspect_kind: kind,
        source_id: format!("{domain}-{i}#0"),
    }
}

pub fn data() -> DataStore {
    let mut store = DataStore::default();
    for domain in Domain::ALL {
        let train = (0..90).map(|i| example(i, domain, AspectKind::Term)).collect();
        let test = (100..130).map(|i| example(i, domain, AspectKind::Term)).collect();
        store.insert(domain, Task::Atsc, Split::Train, train);
        store.insert(domain, Task::Atsc, Split::Test, test);
    }
    let acsc = (200..212).map(|i| example(i, Domain::Restaurants, AspectKind::Category)).collect();
    store.insert(Domain::Restaurants, Task::Acsc, Split::Test, acsc);
    store
}
