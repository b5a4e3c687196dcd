//! Word lists for scratch checkpoints.

use std::path::PathBuf;

use anyhow::Context;
use atsc_core::config::ProjectConfig;
use atsc_core::experiments::AspectReplacement;
use atsc_core::prompting::{ASPECT, MASK};
use atsc_neural::scratch::vocabulary_from_texts;

/// Every string found in `files` (JSON lines contribute their string
/// fields) plus the configured templates and label words.
pub fn collect(files: &[PathBuf], config: &ProjectConfig) -> anyhow::Result<Vec<String>> {
    let mut texts = Vec::new();
    for path in files {
        let content = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in content.lines() {
            match serde_json::from_str::<serde_json::Value>(line) {
                Ok(serde_json::Value::Object(fields)) => {
                    texts.extend(fields.values().filter_map(|v| v.as_str().map(str::to_string)))
                }
                _ => texts.push(line.to_string()),
            }
        }
    }
    let templates = config.templates()?;
    texts.extend(templates.iter().map(|t| t.pattern().replace(MASK, " ").replace(ASPECT, " ")));
    texts.extend(config.prompts.verbalizer.words().map(str::to_string));
    texts.push(AspectReplacement::default().text);
    Ok(vocabulary_from_texts(texts.iter().map(String::as_str)))
}
