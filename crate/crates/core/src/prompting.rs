//! Cloze prompts, next-word prompts, NLI hypotheses and the label-word verbalizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Polarity;

pub const MASK: &str = "[MASK]";
pub const ASPECT: &str = "{aspect}";

/// A prompt pattern with one `{aspect}` placeholder and one `[MASK]` slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TemplateRepr", into = "TemplateRepr")]
pub struct PromptTemplate {
    id: String,
    pattern: String,
}

#[derive(Serialize, Deserialize)]
struct TemplateRepr {
    id: String,
    pattern: String,
}

impl TryFrom<TemplateRepr> for PromptTemplate {
    type Error = Error;

    fn try_from(repr: TemplateRepr) -> Result<Self> {
        PromptTemplate::new(repr.id, repr.pattern)
    }
}

impl From<PromptTemplate> for TemplateRepr {
    fn from(t: PromptTemplate) -> Self {
        TemplateRepr {
            id: t.id,
            pattern: t.pattern,
        }
    }
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let pattern = pattern.into();
        for placeholder in [ASPECT, MASK] {
            let count = pattern.matches(placeholder).count();
            if count != 1 {
                return Err(Error::Template {
                    reason: format!("`{placeholder}` must appear exactly once, found {count}"),
                    pattern,
                });
            }
        }
        if id.trim().is_empty() {
            return Err(Error::Template {
                pattern,
                reason: "empty id".into(),
            });
        }
        Ok(PromptTemplate { id, pattern })
    }

    /// "I felt the {aspect} was [MASK]."
    pub fn felt_was() -> Self {
        Self::shipped("felt_was", "I felt the {aspect} was [MASK].")
    }

    /// "The {aspect} made me feel [MASK]."
    pub fn made_me_feel() -> Self {
        Self::shipped("made_me_feel", "The {aspect} made me feel [MASK].")
    }

    /// "The {aspect} is [MASK]."
    pub fn is() -> Self {
        Self::shipped("is", "The {aspect} is [MASK].")
    }

    pub fn shipped_templates() -> [PromptTemplate; 3] {
        [Self::felt_was(), Self::made_me_feel(), Self::is()]
    }

    fn shipped(id: &str, pattern: &str) -> Self {
        PromptTemplate {
            id: id.into(),
            pattern: pattern.into(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Same pattern with singular copulas turned plural (`is`→`are`, `was`→`were`),
    /// for substituting plural nouns such as "things".
    pub fn pluralized(&self) -> PromptTemplate {
        let pattern = self
            .pattern
            .split(' ')
            .map(|w| match w {
                "is" => "are",
                "was" => "were",
                other => other,
            })
            .collect::<Vec<_>>()
            .join(" ");
        PromptTemplate {
            id: format!("{}_plural", self.id),
            pattern,
        }
    }

    fn fill_aspect(&self, aspect: &str) -> Result<String> {
        if aspect.trim().is_empty() {
            return Err(Error::InvalidInput("aspect must be non-empty".into()));
        }
        if aspect.contains(MASK) {
            return Err(Error::AspectContainsMask(aspect.to_string()));
        }
        Ok(self.pattern.replacen(ASPECT, aspect, 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Cloze,
    NextWord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub full_text: String,
    /// Byte offset of the mask slot in `full_text`; for next-word prompts this
    /// is `full_text.len()`.
    pub mask_offset: usize,
    pub mode: PromptMode,
    /// Text that followed the mask slot in the pattern (next-word prompts only).
    pub suffix: String,
}

fn join_review(review: &str, prompt: &str) -> String {
    if review.is_empty() {
        prompt.to_string()
    } else {
        format!("{review} {prompt}")
    }
}

pub fn render_cloze(template: &PromptTemplate, aspect: &str, review: &str) -> Result<RenderedPrompt> {
    let prompt = template.fill_aspect(aspect)?;
    let full_text = join_review(review, &prompt);
    let mask_offset = full_text.rfind(MASK).expect("pattern holds one mask");
    Ok(RenderedPrompt {
        full_text,
        mask_offset,
        mode: PromptMode::Cloze,
        suffix: String::new(),
    })
}

pub fn render_next_word(template: &PromptTemplate, aspect: &str, review: &str) -> Result<RenderedPrompt> {
    let prompt = template.fill_aspect(aspect)?;
    let (before, after) = prompt.rsplit_once(MASK).expect("pattern holds one mask");
    let full_text = join_review(review, before.trim_end());
    Ok(RenderedPrompt {
        mask_offset: full_text.len(),
        full_text,
        mode: PromptMode::NextWord,
        suffix: after.to_string(),
    })
}

pub fn render(template: &PromptTemplate, aspect: &str, review: &str, mode: PromptMode) -> Result<RenderedPrompt> {
    match mode {
        PromptMode::Cloze => render_cloze(template, aspect, review),
        PromptMode::NextWord => render_next_word(template, aspect, review),
    }
}

/// Positive and negative hypotheses; there is deliberately no neutral one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisPair {
    pub positive_hypothesis: String,
    pub negative_hypothesis: String,
}

pub fn render_hypotheses(template: &PromptTemplate, aspect: &str) -> Result<HypothesisPair> {
    let verbalizer = Verbalizer::default();
    let prompt = template.fill_aspect(aspect)?;
    Ok(HypothesisPair {
        positive_hypothesis: prompt.replacen(MASK, verbalizer.verbalize(Polarity::Positive), 1),
        negative_hypothesis: prompt.replacen(MASK, verbalizer.verbalize(Polarity::Negative), 1),
    })
}

/// Bijection between polarities and label words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    /// Indexed by [`Polarity::index`].
    words: [String; 3],
}

impl Default for Verbalizer {
    fn default() -> Self {
        Verbalizer {
            words: ["good".into(), "bad".into(), "ok".into()],
        }
    }
}

impl Verbalizer {
    pub fn new(positive: &str, negative: &str, neutral: &str) -> Result<Self> {
        let words = [positive, negative, neutral];
        if words.iter().any(|w| w.trim().is_empty() || w.contains(char::is_whitespace)) {
            return Err(Error::InvalidInput("label words must be single words".into()));
        }
        if words[0] == words[1] || words[0] == words[2] || words[1] == words[2] {
            return Err(Error::InvalidInput("label words must be distinct".into()));
        }
        Ok(Verbalizer {
            words: words.map(str::to_string),
        })
    }

    pub fn verbalize(&self, polarity: Polarity) -> &str {
        &self.words[polarity.index()]
    }

    pub fn unverbalize(&self, word: &str) -> Result<Polarity> {
        self.words
            .iter()
            .position(|w| w == word)
            .and_then(Polarity::from_index)
            .ok_or_else(|| Error::UnknownLabel(word.to_string()))
    }

    /// Label words in [`Polarity::ALL`] order.
    pub fn words(&self) -> [&str; 3] {
        [&self.words[0], &self.words[1], &self.words[2]]
    }
}

/// Templates addressable by id: the three shipped ones plus any registered from config.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = PromptTemplate::shipped_templates()
            .into_iter()
            .map(|t| (t.id.clone(), t))
            .collect();
        TemplateSet { templates }
    }
}

impl TemplateSet {
    pub fn register(&mut self, template: PromptTemplate) -> Result<()> {
        if self.templates.contains_key(template.id()) {
            return Err(Error::Template {
                pattern: template.pattern,
                reason: format!("duplicate template id `{}`", template.id),
            });
        }
        self.templates.insert(template.id.clone(), template);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown template `{id}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}

/// Optional rewriting of category names before they enter prompts.
/// Empty by default, so categories are substituted verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectAliases(pub BTreeMap<String, String>);

impl AspectAliases {
    pub fn resolve<'a>(&'a self, aspect: &'a str) -> &'a str {
        self.0.get(aspect).map(String::as_str).unwrap_or(aspect)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn shipped_patterns_are_verbatim() {
        let patterns: Vec<_> = PromptTemplate::shipped_templates()
            .iter()
            .map(|t| format!("{}={}", t.id(), t.pattern()))
            .collect();
        assert_eq!(
            patterns.join("\n"),
            "felt_was=I felt the {aspect} was [MASK].\n\
             made_me_feel=The {aspect} made me feel [MASK].\n\
             is=The {aspect} is [MASK]."
        );
    }

    #[test]
    fn cloze_examples() {
        let p = render_cloze(&PromptTemplate::is(), "battery life", "Great machine.").unwrap();
        assert_eq!(p.full_text, "Great machine. The battery life is [MASK].");
        assert_eq!(&p.full_text[p.mask_offset..p.mask_offset + MASK.len()], MASK);

        let p = render_cloze(&PromptTemplate::felt_was(), "fajitas", "R").unwrap();
        assert_eq!(p.full_text, "R I felt the fajitas was [MASK].");
        let p = render_cloze(&PromptTemplate::made_me_feel(), "service", "R").unwrap();
        assert_eq!(p.full_text, "R The service made me feel [MASK].");
    }

    #[test]
    fn next_word_examples() {
        let p = render_next_word(&PromptTemplate::is(), "screen", "Nice.").unwrap();
        assert_eq!(p.full_text, "Nice. The screen is");
        assert_eq!(p.suffix, ".");
        assert_eq!(p.mask_offset, p.full_text.len());

        let p = render_next_word(&PromptTemplate::felt_was(), "keyboard", "R").unwrap();
        assert_eq!(p.full_text, "R I felt the keyboard was");
        assert_eq!(p.suffix, ".");

        let mid = PromptTemplate::new("mid", "The {aspect} felt [MASK] to me.").unwrap();
        let p = render_next_word(&mid, "fan", "R").unwrap();
        assert_eq!(p.full_text, "R The fan felt");
        assert_eq!(p.suffix, " to me.");
    }

    #[test]
    fn hypothesis_examples() {
        let h = render_hypotheses(&PromptTemplate::is(), "service").unwrap();
        assert_eq!(h.positive_hypothesis, "The service is good.");
        assert_eq!(h.negative_hypothesis, "The service is bad.");
        let h = render_hypotheses(&PromptTemplate::felt_was(), "wine list").unwrap();
        assert_eq!(h.positive_hypothesis, "I felt the wine list was good.");
        assert_eq!(h.negative_hypothesis, "I felt the wine list was bad.");
        let h = render_hypotheses(&PromptTemplate::is(), "anecdotes/miscellaneous").unwrap();
        assert_eq!(h.positive_hypothesis, "The anecdotes/miscellaneous is good.");
    }

    #[test]
    fn rejects_mask_in_aspect_and_empty_aspect() {
        assert!(matches!(
            render_cloze(&PromptTemplate::is(), "the [MASK]", "R"),
            Err(Error::AspectContainsMask(_))
        ));
        assert!(render_hypotheses(&PromptTemplate::is(), " ").is_err());
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::new("x", "The {aspect} is").is_err());
        assert!(PromptTemplate::new("x", "{aspect} {aspect} [MASK]").is_err());
        assert!(PromptTemplate::new("x", "[MASK] [MASK] {aspect}").is_err());
        assert!(PromptTemplate::new("x", "Overall the {aspect} felt [MASK].").is_ok());
    }

    #[test]
    fn template_set_registration() {
        let mut set = TemplateSet::default();
        assert_eq!(set.iter().count(), 3);
        set.register(PromptTemplate::new("seems", "The {aspect} seems [MASK].").unwrap())
            .unwrap();
        assert!(set.get("seems").is_ok());
        assert!(set.register(PromptTemplate::is()).is_err());
        assert!(set.get("nope").is_err());
    }

    #[test]
    fn pluralized_agreement() {
        assert_eq!(PromptTemplate::is().pluralized().pattern(), "The {aspect} are [MASK].");
        assert_eq!(PromptTemplate::felt_was().pluralized().pattern(), "I felt the {aspect} were [MASK].");
        assert_eq!(
            PromptTemplate::made_me_feel().pluralized().pattern(),
            PromptTemplate::made_me_feel().pattern()
        );
    }

    #[test]
    fn verbalizer_bijection() {
        let v = Verbalizer::default();
        assert_eq!(v.verbalize(Polarity::Positive), "good");
        assert_eq!(v.unverbalize("ok").unwrap(), Polarity::Neutral);
        for p in Polarity::ALL {
            assert_eq!(v.unverbalize(v.verbalize(p)).unwrap(), p);
        }
        assert!(v.unverbalize("great").is_err());
        assert!(Verbalizer::new("good", "good", "ok").is_err());
    }

    #[test]
    fn aliases_default_to_verbatim() {
        let mut aliases = AspectAliases::default();
        assert_eq!(aliases.resolve("anecdotes/miscellaneous"), "anecdotes/miscellaneous");
        aliases.0.insert("anecdotes/miscellaneous".into(), "overall experience".into());
        assert_eq!(aliases.resolve("anecdotes/miscellaneous"), "overall experience");
    }

    proptest! {
        #[test]
        fn cloze_adds_aspect_once(aspect in "X[a-z]{1,8}( [a-z]{1,8})?", review in "[a-zX ,.]{0,40}") {
            for template in PromptTemplate::shipped_templates() {
                let p = render_cloze(&template, &aspect, &review).unwrap();
                prop_assert_eq!(
                    p.full_text.matches(aspect.as_str()).count(),
                    review.matches(aspect.as_str()).count() + 1
                );
                prop_assert_eq!(p.full_text.matches(MASK).count(), 1);
                prop_assert_eq!(render_cloze(&template, &aspect, &review).unwrap(), p);
            }
        }

        #[test]
        fn hypotheses_differ_in_one_token(aspect in "[A-Za-z/]{1,12}( [a-z]{1,8})?") {
            for template in PromptTemplate::shipped_templates() {
                let h = render_hypotheses(&template, &aspect).unwrap();
                let pos: Vec<_> = h.positive_hypothesis.split_whitespace().collect();
                let neg: Vec<_> = h.negative_hypothesis.split_whitespace().collect();
                prop_assert_eq!(pos.len(), neg.len());
                let diffs: Vec<_> = pos.iter().zip(&neg).filter(|(a, b)| a != b).collect();
                prop_assert_eq!(diffs.len(), 1);
                prop_assert!(diffs[0].0.starts_with("good") && diffs[0].1.starts_with("bad"));
            }
        }
    }
}
