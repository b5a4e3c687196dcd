use roxmltree::{Document, Node};
use tracing::warn;

use super::{LabeledExample, RawAnnotation, RawAspect};
use crate::error::{Error, Result};
use crate::label::{Domain, RawPolarity, Task};

/// Parses a SemEval-2014 Task 4 document into one annotation per `<sentence>`.
///
/// `Task::Atsc` reads `aspectTerm` records, `Task::Acsc` reads `aspectCategory`
/// records. Conflict labels are kept; [`preprocess`] drops them.
pub fn parse_semeval(xml: &[u8], task: Task) -> Result<Vec<RawAnnotation>> {
    let source = std::str::from_utf8(xml).map_err(|e| Error::Xml {
        line: 0,
        column: 0,
        message: format!("document is not UTF-8: {e}"),
    })?;
    let doc = Document::parse(source).map_err(|e| {
        let pos = e.pos();
        Error::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let (group, record, surface_attr) = match task {
        Task::Atsc => ("aspectTerms", "aspectTerm", "term"),
        Task::Acsc => ("aspectCategories", "aspectCategory", "category"),
    };

    let mut out = Vec::new();
    for sentence in doc
        .descendants()
        .filter(|n| n.has_tag_name("sentence"))
    {
        let sentence_id = sentence.attribute("id").unwrap_or_default().to_string();
        let text = child(sentence, "text")
            .map(|t| t.text().unwrap_or_default().to_string())
            .ok_or_else(|| {
                let pos = doc.text_pos_at(sentence.range().start);
                Error::Xml {
                    line: pos.row,
                    column: pos.col,
                    message: format!("sentence {sentence_id} has no <text> element"),
                }
            })?;

        let mut aspects = Vec::new();
        if let Some(group) = child(sentence, group) {
            for node in group.children().filter(|n| n.has_tag_name(record)) {
                let surface = node
                    .attribute(surface_attr)
                    .ok_or_else(|| Error::MissingAttribute {
                        sentence_id: sentence_id.clone(),
                        attribute: surface_attr,
                    })?
                    .to_string();
                let polarity: RawPolarity = node
                    .attribute("polarity")
                    .ok_or_else(|| Error::MissingAttribute {
                        sentence_id: sentence_id.clone(),
                        attribute: "polarity",
                    })?
                    .parse()?;
                let char_span = match task {
                    Task::Atsc => span(node),
                    Task::Acsc => None,
                };
                if let Some((from, to)) = char_span {
                    let covered: String = text.chars().skip(from).take(to.saturating_sub(from)).collect();
                    if covered != surface {
                        warn!(
                            sentence_id = %sentence_id,
                            "span {from}..{to} covers `{covered}`, not `{surface}`"
                        );
                    }
                }
                aspects.push(RawAspect {
                    surface,
                    polarity,
                    char_span,
                });
            }
        }

        out.push(RawAnnotation {
            sentence_id,
            text,
            aspects,
            aspect_kind: task.aspect_kind(),
        });
    }
    Ok(out)
}

fn child<'a, 'i>(node: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(tag))
}

fn span(node: Node) -> Option<(usize, usize)> {
    let from = node.attribute("from")?.parse().ok()?;
    let to = node.attribute("to")?.parse().ok()?;
    Some((from, to))
}

/// Drops conflict labels and flattens each sentence into one example per aspect.
pub fn preprocess(raw: &[RawAnnotation], domain: Domain) -> Vec<LabeledExample> {
    raw.iter()
        .flat_map(|sentence| {
            sentence
                .aspects
                .iter()
                .enumerate()
                .filter_map(move |(k, aspect)| {
                    aspect.polarity.resolved().map(|polarity| LabeledExample {
                        text: sentence.text.clone(),
                        aspect: aspect.surface.clone(),
                        polarity,
                        domain,
                        aspect_kind: sentence.aspect_kind,
                        source_id: format!("{}#{k}", sentence.sentence_id),
                    })
                })
        })
        .collect()
}
