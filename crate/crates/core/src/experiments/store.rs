use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::{aggregate, AggregateCell, GridOutcome, RunFailure};
use super::RunResult;
use crate::artifact::write_atomic;
use crate::error::{Error, Result};

/// Contents of `<out>/index.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultIndex {
    pub runs: Vec<RunResult>,
    pub cells: Vec<AggregateCell>,
    #[serde(default)]
    pub failures: Vec<RunFailure>,
}

fn runs_dir(out: &Path) -> Result<PathBuf> {
    let dir = out.join("runs");
    fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
    Ok(dir)
}

/// Writes `runs/<fingerprint>.json` and `runs/<fingerprint>.predictions.jsonl`.
pub fn write_run(out: &Path, run: &RunResult) -> Result<()> {
    let dir = runs_dir(out)?;
    let summary = RunResult {
        predictions: Vec::new(),
        ..run.clone()
    };
    write_atomic(&dir.join(format!("{}.json", run.fingerprint)), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        Ok(())
    })?;
    write_atomic(&dir.join(format!("{}.predictions.jsonl", run.fingerprint)), |w| {
        for p in &run.predictions {
            serde_json::to_writer(&mut *w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Writes every run plus `index.json` with the aggregated cells.
pub fn write_grid(out: &Path, outcome: &GridOutcome) -> Result<()> {
    for run in &outcome.results {
        write_run(out, run)?;
    }
    let index = ResultIndex {
        runs: outcome
            .results
            .iter()
            .map(|r| RunResult {
                predictions: Vec::new(),
                ..r.clone()
            })
            .collect(),
        cells: outcome.cells.clone(),
        failures: outcome.failures.clone(),
    };
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    write_atomic(&out.join("index.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &index)?;
        Ok(())
    })
}

/// Reads `index.json`, or rebuilds it from `runs/*.json` when absent.
pub fn read_results(out: &Path) -> Result<ResultIndex> {
    let index = out.join("index.json");
    if index.exists() {
        let text = fs::read(&index).map_err(|e| Error::file(&index, e))?;
        return Ok(serde_json::from_slice(&text)?);
    }
    let dir = out.join("runs");
    let mut runs = Vec::new();
    let entries = fs::read_dir(&dir).map_err(|e| Error::file(&dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read(&path).map_err(|e| Error::file(&path, e))?;
        runs.push(serde_json::from_slice::<RunResult>(&text)?);
    }
    Ok(ResultIndex {
        cells: aggregate(&runs),
        runs,
        failures: Vec::new(),
    })
}
