use std::io::BufRead;

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::split_sentences;
use crate::label::Domain;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainSentence {
    pub text: String,
    pub domain: Domain,
}

/// A raw review with its store category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRecord {
    pub categories: Vec<String>,
    pub text: String,
}

impl ReviewRecord {
    /// Accepts a JSON object with `category` (string or list) or `categories`
    /// and `text` or `reviewText`, or a tab-separated `category<TAB>text` line.
    pub fn parse(line: &str) -> Option<ReviewRecord> {
        let trimmed = line.trim();
        if trimmed.starts_with('{') {
            let value: serde_json::Value = serde_json::from_str(trimmed).ok()?;
            let categories = ["category", "categories", "main_cat"]
                .iter()
                .find_map(|key| value.get(*key))
                .map(category_list)?;
            let text = ["text", "reviewText"]
                .iter()
                .find_map(|key| value.get(*key).and_then(|v| v.as_str()))?
                .to_string();
            Some(ReviewRecord { categories, text })
        } else {
            let (category, text) = trimmed.split_once('\t')?;
            Some(ReviewRecord {
                categories: vec![category.to_string()],
                text: text.to_string(),
            })
        }
    }

    pub fn matches(&self, domain: Domain) -> bool {
        let wanted = domain.corpus_category();
        self.categories.iter().any(|c| {
            c.split([',', '&', '|'])
                .any(|part| part.trim().eq_ignore_ascii_case(wanted))
        })
    }
}

fn category_list(value: &serde_json::Value) -> Vec<String> {
    match value {
        serde_json::Value::String(s) => vec![s.clone()],
        serde_json::Value::Array(items) => items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    }
}

/// Streams in-domain sentences from a line-delimited review corpus.
///
/// Unreadable lines are counted and skipped. `limit` caps the number of
/// in-domain reviews consumed.
pub fn prepare_pretrain_corpus<R: BufRead>(reader: R, domain: Domain, limit: Option<usize>) -> PretrainStream<R> {
    PretrainStream {
        lines: reader.lines(),
        domain,
        limit,
        consumed: 0,
        skipped: 0,
        filtered: 0,
        pending: std::collections::VecDeque::new(),
    }
}

pub struct PretrainStream<R> {
    lines: std::io::Lines<R>,
    domain: Domain,
    limit: Option<usize>,
    consumed: usize,
    skipped: usize,
    filtered: usize,
    pending: std::collections::VecDeque<String>,
}

impl<R> PretrainStream<R> {
    /// In-domain reviews read so far.
    pub fn consumed(&self) -> usize {
        self.consumed
    }

    /// Lines that could not be read or parsed.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Well-formed reviews from other categories.
    pub fn filtered(&self) -> usize {
        self.filtered
    }
}

impl<R: BufRead> Iterator for PretrainStream<R> {
    type Item = PretrainSentence;

    fn next(&mut self) -> Option<PretrainSentence> {
        loop {
            if let Some(text) = self.pending.pop_front() {
                return Some(PretrainSentence {
                    text,
                    domain: self.domain,
                });
            }
            if self.limit.is_some_and(|limit| self.consumed >= limit) {
                return None;
            }
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    debug!("unreadable corpus line: {e}");
                    self.skipped += 1;
                    continue;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let Some(record) = ReviewRecord::parse(&line) else {
                self.skipped += 1;
                continue;
            };
            if !record.matches(self.domain) {
                self.filtered += 1;
                continue;
            }
            self.consumed += 1;
            self.pending.extend(split_sentences(&record.text));
        }
    }
}
