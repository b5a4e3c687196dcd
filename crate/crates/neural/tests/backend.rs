use std::collections::BTreeMap;
use std::path::Path;

use atsc_core::backend::{
    Backend, BackendDescriptor, BackendEntry, BackendFactory, BackendFamily, LoadOptions, PairReadout,
    TrainingInstance, TrainingSchedule,
};
use atsc_core::corpus::LabeledExample;
use atsc_core::heads::{HeadKind, HeadSetup, NliScoring};
use atsc_core::prompting::{PromptTemplate, Verbalizer, MASK};
use atsc_core::{AspectKind, Domain, Error, Polarity};
use atsc_neural::scratch::{vocabulary_from_texts, write_scratch_model, ScratchSpec};
use atsc_neural::CandleFactory;
use proptest::prelude::*;
use tempfile::TempDir;

const REVIEWS: [(&str, &str, Polarity); 16] = [
    ("the pasta was great", "pasta", Polarity::Positive),
    ("lovely staff and great wine", "staff", Polarity::Positive),
    ("the screen is bright and sharp", "screen", Polarity::Positive),
    ("battery life is excellent", "battery", Polarity::Positive),
    ("fast delivery , tasty pizza", "pizza", Polarity::Positive),
    ("the keyboard feels solid", "keyboard", Polarity::Positive),
    ("the soup was cold and bland", "soup", Polarity::Negative),
    ("rude waiter , slow service", "service", Polarity::Negative),
    ("the fan is loud and annoying", "fan", Polarity::Negative),
    ("the charger broke after a week", "charger", Polarity::Negative),
    ("awful dessert", "dessert", Polarity::Negative),
    ("the trackpad is terrible", "trackpad", Polarity::Negative),
    ("we ordered the salad", "salad", Polarity::Neutral),
    ("it ships with a charger", "charger", Polarity::Neutral),
    ("the menu lists three wines", "menu", Polarity::Neutral),
    ("the laptop has two ports", "ports", Polarity::Neutral),
];

fn examples() -> Vec<LabeledExample> {
    REVIEWS
        .iter()
        .enumerate()
        .map(|(i, (text, aspect, polarity))| LabeledExample {
            text: text.to_string(),
            aspect: aspect.to_string(),
            polarity: *polarity,
            domain: Domain::Restaurants,
            aspect_kind: AspectKind::Term,
            source_id: format!("s{i}"),
        })
        .collect()
}

fn words() -> Vec<String> {
    let extra = "i felt the was . made me feel is good bad ok things yes no";
    vocabulary_from_texts(REVIEWS.iter().map(|r| r.0).chain([extra]))
}

fn scratch(dir: &Path, family: BackendFamily) -> BackendEntry {
    write_scratch_model(dir, &ScratchSpec::tiny(family, 5), &words()).unwrap();
    BackendEntry {
        descriptor: BackendDescriptor::generic(family),
        path: dir.to_path_buf(),
        options: BTreeMap::new(),
    }
}

fn load(entry: &BackendEntry, seed: u64) -> Box<dyn Backend> {
    CandleFactory.load(entry, LoadOptions { seed, readout: None }).unwrap()
}

fn schedule(epochs: usize) -> TrainingSchedule {
    TrainingSchedule {
        epochs,
        batch_size: 4,
        learning_rate: 3e-3,
        weight_decay: 0.0,
        seed: 13,
        max_steps: None,
        linear_decay: true,
        max_grad_norm: Some(1.0),
    }
}

fn instances(kind: HeadKind) -> Vec<TrainingInstance> {
    let template = PromptTemplate::felt_was();
    let verbalizer = Verbalizer::default();
    let setup = HeadSetup {
        kind,
        template: kind.uses_template().then_some(&template),
        verbalizer: &verbalizer,
        scoring: NliScoring::LogitSoftmax,
    };
    examples().iter().map(|e| setup.training_instance(e).unwrap()).collect()
}

#[test]
fn cloze_fit_drives_loss_down() {
    let dir = TempDir::new().unwrap();
    let entry = scratch(dir.path(), BackendFamily::MaskedLm);
    let mut backend = load(&entry, 1);
    assert!(!backend.is_fitted());
    let report = backend.fit(&instances(HeadKind::LmCloze), &schedule(20)).unwrap();
    assert_eq!(report.epoch_losses.len(), 20);
    assert_eq!(report.steps, 80);
    let (first, last) = (report.initial_loss().unwrap(), report.final_loss().unwrap());
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(backend.is_fitted());
}

#[test]
fn restricted_and_full_mask_fill_share_one_softmax() {
    let dir = TempDir::new().unwrap();
    let backend = load(&scratch(dir.path(), BackendFamily::MaskedLm), 1);
    let text = format!("the pasta was great . i felt the pasta was {MASK} .");
    let full = backend.mask_fill(&text, None).unwrap();
    let restricted = backend.mask_fill(&text, Some(&["good", "bad", "ok"])).unwrap();
    assert!(!full.restricted && restricted.restricted);
    assert!((full.total() - 1.0).abs() < 1e-6);
    for word in ["good", "bad", "ok"] {
        let (r, f) = (restricted.get(word).unwrap(), full.get(word).unwrap());
        assert!((r - f).abs() < 1e-6, "{word}: {r} vs {f}");
    }
}

#[test]
fn mask_count_is_checked() {
    let dir = TempDir::new().unwrap();
    let backend = load(&scratch(dir.path(), BackendFamily::MaskedLm), 1);
    let none = backend.mask_fill("the pasta was great", None).unwrap_err();
    assert!(matches!(none, Error::MaskCount(0)), "{none}");
    let two = backend.mask_fill(&format!("{MASK} and {MASK}"), None).unwrap_err();
    assert!(matches!(two, Error::MaskCount(2)), "{two}");
}

#[test]
fn long_inputs_are_truncated_from_the_left() {
    let dir = TempDir::new().unwrap();
    let mut entry = scratch(dir.path(), BackendFamily::MaskedLm);
    entry.options.insert("max_len".into(), serde_json::json!(8));
    let backend = load(&entry, 1);
    let tail = format!("i felt the pasta was {MASK}");
    let long = format!("{} {tail}", "the soup was cold and bland . ".repeat(20));
    let short = backend.mask_fill(&tail, Some(&["good", "bad", "ok"])).unwrap();
    let clipped = backend.mask_fill(&long, Some(&["good", "bad", "ok"])).unwrap();
    for word in ["good", "bad", "ok"] {
        assert!((short.get(word).unwrap() - clipped.get(word).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn loading_and_fitting_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let entry = scratch(dir.path(), BackendFamily::PairClassifier);
    let run = || {
        let mut backend = CandleFactory
            .load(&entry, LoadOptions { seed: 7, readout: Some(PairReadout::Cls) })
            .unwrap();
        let report = backend.fit(&instances(HeadKind::BaselineCls), &schedule(2)).unwrap();
        (report.epoch_losses, backend.pair_classify("awful dessert", "dessert").unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn pair_classifier_round_trips_through_disk() {
    let base = TempDir::new().unwrap();
    let saved = TempDir::new().unwrap();
    let entry = scratch(base.path(), BackendFamily::PairClassifier);
    for readout in [PairReadout::Cls, PairReadout::Nsp] {
        let mut backend = CandleFactory.load(&entry, LoadOptions { seed: 3, readout: Some(readout) }).unwrap();
        backend.fit(&instances(HeadKind::BaselineCls), &schedule(1)).unwrap();
        backend.save(saved.path()).unwrap();
        let mut saved_entry = entry.clone();
        saved_entry.path = saved.path().to_path_buf();
        let reloaded = CandleFactory.load(&saved_entry, LoadOptions { seed: 99, readout: Some(readout) }).unwrap();
        assert!(reloaded.is_fitted());
        let a = backend.pair_classify("the fan is loud", "fan").unwrap();
        let b = reloaded.pair_classify("the fan is loud", "fan").unwrap();
        for (x, y) in a.scores.iter().zip(b.scores) {
            assert!((x - y).abs() < 1e-5, "{readout:?}: {:?} vs {:?}", a.scores, b.scores);
        }
    }
}

#[test]
fn nli_backend_scores_and_trains() {
    let dir = TempDir::new().unwrap();
    let mut backend = load(&scratch(dir.path(), BackendFamily::Nli), 1);
    let logits = backend.nli_score("the pasta was great", "the pasta was good .").unwrap();
    assert!(logits.is_finite());
    let report = backend.fit(&instances(HeadKind::Nli), &schedule(3)).unwrap();
    assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn gpt2_next_word_distribution_and_fit() {
    let dir = TempDir::new().unwrap();
    let mut backend = load(&scratch(dir.path(), BackendFamily::CausalLm), 1);
    let dist = backend.next_token("i felt the pasta was", None).unwrap();
    assert!((dist.total() - 1.0).abs() < 1e-6);
    let report = backend.fit(&instances(HeadKind::LmNextWord), &schedule(10)).unwrap();
    assert!(report.final_loss().unwrap() < report.initial_loss().unwrap());
}

#[test]
fn capability_mismatch_is_reported() {
    let dir = TempDir::new().unwrap();
    let mut backend = load(&scratch(dir.path(), BackendFamily::MaskedLm), 1);
    assert!(matches!(backend.nli_score("a", "b"), Err(Error::Unsupported { .. })));
    let err = backend.fit(&instances(HeadKind::Nli), &schedule(1)).unwrap_err();
    assert!(matches!(err, Error::Unsupported { .. }), "{err}");
}

#[test]
fn token_level_objectives_train() {
    let dir = TempDir::new().unwrap();
    let mut backend = load(&scratch(dir.path(), BackendFamily::MaskedLm), 1);
    let vocab = backend.vocabulary().unwrap();
    let ids: Vec<u32> = vocab.encode("the pasta was great").unwrap().iter().map(|p| p.id).collect();
    let mask = vocab.mask_id().unwrap();
    let mut input = ids.clone();
    input[1] = mask;
    let mut labels = vec![None; ids.len()];
    labels[1] = Some(ids[1]);
    let instance = TrainingInstance::MaskedLm { input_ids: input, labels };
    let report = backend.fit(&vec![instance; 8], &schedule(5)).unwrap();
    assert!(report.final_loss().unwrap() < report.initial_loss().unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn label_word_scores_are_probabilities(review in "[a-z]{1,8}( [a-z]{1,8}){0,6}") {
        let dir = TempDir::new().unwrap();
        let backend = load(&scratch(dir.path(), BackendFamily::MaskedLm), 1);
        let dist = backend.mask_fill(&format!("{review} . i felt the food was {MASK} ."), Some(&["good", "bad", "ok"])).unwrap();
        prop_assert!(dist.entries.values().all(|p| *p > 0.0 && *p < 1.0));
        prop_assert!(dist.total() < 1.0 + 1e-9);
    }
}
