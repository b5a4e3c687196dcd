//! Word segmentation and a lexicon-plus-suffix part-of-speech tagger.
//!
//! Tags follow the Universal Dependencies coarse set. The tagger is small and
//! deterministic; callers with a better tagger can supply tags in
//! `word/TAG` form through [`parse_pretagged`].

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "ADJ" => PosTag::Adj,
            "ADP" => PosTag::Adp,
            "ADV" => PosTag::Adv,
            "AUX" => PosTag::Aux,
            "CCONJ" | "CONJ" => PosTag::Cconj,
            "DET" => PosTag::Det,
            "INTJ" => PosTag::Intj,
            "NOUN" => PosTag::Noun,
            "NUM" => PosTag::Num,
            "PART" => PosTag::Part,
            "PRON" => PosTag::Pron,
            "PROPN" => PosTag::Propn,
            "PUNCT" => PosTag::Punct,
            "SCONJ" => PosTag::Sconj,
            "SYM" => PosTag::Sym,
            "VERB" => PosTag::Verb,
            "X" => PosTag::X,
            other => return Err(Error::InvalidInput(format!("unknown POS tag `{other}`"))),
        })
    }
}

/// A word with its byte span `[start, end)` in the sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedWord {
    pub start: usize,
    pub end: usize,
    pub tag: PosTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub text: String,
    pub words: Vec<TaggedWord>,
}

impl TaggedSentence {
    pub fn word(&self, index: usize) -> &str {
        let w = &self.words[index];
        &self.text[w.start..w.end]
    }
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, text: &str) -> TaggedSentence;
}

/// Splits on whitespace and separates punctuation, keeping in-word
/// apostrophes and hyphens. Returns byte spans.
pub fn segment_words(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let joiner = (c == '\'' || c == '-' || c == '.' || c == ',')
            && start.is_some()
            && chars.get(k + 1).is_some_and(|&(_, n)| n.is_alphanumeric())
            && (c != '.' && c != ',' || chars[k - 1].1.is_ascii_digit());
        if c.is_alphanumeric() || joiner {
            start.get_or_insert(i);
        } else {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
            if !c.is_whitespace() {
                spans.push((i, i + c.len_utf8()));
            }
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "every", "each", "some", "any", "no",
    "all", "both", "another", "either", "neither", "such",
];
const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them", "my", "your",
    "his", "its", "our", "their", "mine", "yours", "hers", "ours", "theirs", "myself",
    "yourself", "himself", "herself", "itself", "ourselves", "themselves", "who", "whom",
    "whose", "what", "which", "someone", "something", "everyone", "everything", "nothing",
    "anything", "anyone", "nobody", "everybody", "one", "i'm", "it's", "i've", "i'd", "you're",
    "they're", "we're", "that's",
];
const ADPOSITIONS: &[&str] = &[
    "in", "on", "at", "by", "for", "with", "about", "against", "between", "into", "through",
    "during", "before", "after", "above", "below", "to", "from", "up", "down", "of", "off",
    "over", "under", "than", "without", "within", "around", "across", "behind", "near", "per",
    "via", "like", "out",
];
const COORDINATORS: &[&str] = &["and", "or", "but", "nor", "yet", "plus"];
const SUBORDINATORS: &[&str] = &[
    "because", "although", "though", "if", "while", "since", "unless", "whereas", "whether",
    "when", "where", "once", "until",
];
const AUXILIARIES: &[&str] = &[
    "is", "am", "are", "was", "were", "be", "been", "being", "have", "has", "had", "do", "does",
    "did", "will", "would", "can", "could", "should", "may", "might", "must", "shall", "isn't",
    "wasn't", "aren't", "weren't", "don't", "doesn't", "didn't", "won't", "can't", "couldn't",
    "wouldn't", "shouldn't", "haven't", "hasn't",
];
const PARTICLES: &[&str] = &["not", "n't", "'s", "'"];
const ADVERBS: &[&str] = &[
    "very", "really", "too", "also", "just", "quite", "so", "always", "never", "still", "even",
    "only", "well", "however", "here", "there", "then", "now", "again", "almost", "rather",
    "somewhat", "pretty", "definitely", "highly", "often", "sometimes", "already", "soon",
    "ever", "much", "more", "most", "less", "least", "back", "away", "maybe", "perhaps",
    "instead", "overall", "enough", "why", "how",
];
const INTERJECTIONS: &[&str] = &["wow", "oh", "yes", "yeah", "hey", "ugh", "alas", "please", "thanks"];
const ADJECTIVES: &[&str] = &[
    "good", "great", "bad", "ok", "okay", "excellent", "terrible", "awful", "nice", "amazing",
    "poor", "slow", "fast", "quick", "cheap", "expensive", "delicious", "friendly", "rude",
    "small", "big", "large", "new", "old", "hot", "cold", "fresh", "stale", "tasty", "bland",
    "best", "worst", "better", "worse", "perfect", "fine", "decent", "average", "lovely",
    "ugly", "clean", "dirty", "loud", "quiet", "bright", "dim", "light", "heavy", "long",
    "short", "high", "low", "easy", "hard", "happy", "sad", "horrible", "fantastic",
    "wonderful", "superb", "mediocre", "solid", "sturdy", "flimsy", "huge", "tiny", "warm",
    "cool", "sweet", "sour", "salty", "spicy", "rich", "crisp", "smooth", "sharp", "clear",
    "attentive", "slow", "sluggish", "responsive", "reliable", "overpriced", "pricey",
    "affordable", "authentic", "cozy", "crowded", "empty", "full", "free", "extra", "main",
    "whole", "favorite", "favourite", "same", "other", "few", "many", "several", "first",
    "last", "next", "own", "real", "true", "wrong", "right", "fun", "busy", "glad", "sorry",
    "able", "impressed", "disappointed", "satisfied", "pleased",
];
const VERBS: &[&str] = &[
    "love", "loved", "loves", "hate", "hated", "hates", "recommend", "ordered", "order", "went",
    "go", "goes", "came", "come", "comes", "got", "get", "gets", "make", "made", "makes", "feel",
    "felt", "feels", "buy", "bought", "use", "used", "uses", "work", "works", "worked", "say",
    "said", "think", "thought", "know", "knew", "want", "wanted", "need", "needed", "try",
    "tried", "take", "took", "taken", "give", "gave", "given", "see", "saw", "seen", "look",
    "looks", "looked", "seem", "seems", "seemed", "eat", "ate", "eaten", "run", "runs", "ran",
    "keep", "kept", "find", "found", "let", "put", "sat", "sit", "wait", "waited", "return",
    "returned", "enjoy", "enjoyed", "lasts", "last", "paid", "pay", "serve", "served", "charge",
    "crashed", "crashes", "boot", "boots", "died",
];

/// Closed-class lexicons, a small open-class lexicon, then suffix rules;
/// unknown words default to NOUN, capitalised non-initial words to PROPN.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconTagger;

impl LexiconTagger {
    fn tag_word(word: &str, sentence_initial: bool) -> PosTag {
        let lower = word.to_lowercase();
        let w = lower.as_str();
        let first = word.chars().next().unwrap_or(' ');
        if !first.is_alphanumeric() {
            return if word.chars().all(|c| c.is_ascii_punctuation()) {
                PosTag::Punct
            } else {
                PosTag::Sym
            };
        }
        if w.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') {
            return PosTag::Num;
        }
        let lookup: [(&[&str], PosTag); 10] = [
            (DETERMINERS, PosTag::Det),
            (PRONOUNS, PosTag::Pron),
            (AUXILIARIES, PosTag::Aux),
            (COORDINATORS, PosTag::Cconj),
            (SUBORDINATORS, PosTag::Sconj),
            (ADPOSITIONS, PosTag::Adp),
            (PARTICLES, PosTag::Part),
            (ADVERBS, PosTag::Adv),
            (INTERJECTIONS, PosTag::Intj),
            (ADJECTIVES, PosTag::Adj),
        ];
        if let Some((_, tag)) = lookup.iter().find(|(words, _)| words.contains(&w)) {
            return *tag;
        }
        if VERBS.contains(&w) {
            return PosTag::Verb;
        }
        if first.is_uppercase() && !sentence_initial {
            return PosTag::Propn;
        }
        let suffix = |s: &[&str]| s.iter().any(|x| w.len() > x.len() + 2 && w.ends_with(x));
        if suffix(&["ly"]) {
            PosTag::Adv
        } else if suffix(&["ful", "ous", "ive", "able", "ible", "less", "ish", "ic", "est", "ier", "ary"]) {
            PosTag::Adj
        } else if suffix(&["ing", "ed", "ize", "ise"]) {
            PosTag::Verb
        } else {
            PosTag::Noun
        }
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, text: &str) -> TaggedSentence {
        let words = segment_words(text)
            .into_iter()
            .enumerate()
            .map(|(i, (start, end))| TaggedWord {
                start,
                end,
                tag: Self::tag_word(&text[start..end], i == 0),
            })
            .collect();
        TaggedSentence {
            text: text.to_string(),
            words,
        }
    }
}

/// Parses whitespace-separated `word/TAG` tokens; words are re-joined with single spaces.
pub fn parse_pretagged(line: &str) -> Result<TaggedSentence> {
    let mut text = String::new();
    let mut words = Vec::new();
    for token in line.split_whitespace() {
        let (word, tag) = token
            .rsplit_once('/')
            .filter(|(w, _)| !w.is_empty())
            .ok_or_else(|| Error::InvalidInput(format!("`{token}` is not word/TAG")))?;
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(word);
        words.push(TaggedWord {
            start,
            end: text.len(),
            tag: tag.parse()?,
        });
    }
    Ok(TaggedSentence { text, words })
}
