use std::io::{BufRead, Write};

use super::LabeledExample;
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_examples<W: Write>(mut out: W, examples: &[LabeledExample]) -> Result<()> {
    for example in examples {
        serde_json::to_writer(&mut out, example)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_examples<R: BufRead>(input: R) -> Result<Vec<LabeledExample>> {
    let mut examples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        examples.push(example);
    }
    Ok(examples)
}
