//! Result tables: CSV and aligned text renderings of aggregated runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::ShotCount;
use crate::error::{Error, Result};
use crate::experiments::{aggregate, AggregateCell, RunResult};
use crate::heads::HeadKind;
use crate::label::{Domain, Polarity, Task};
use crate::metrics::{z_test, ZTestOptions};

pub const MISSING: &str = "--";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Main,
    CrossDomain,
    Acsc,
    PerPrompt,
    PerClass,
}

impl Layout {
    pub const ALL: [Layout; 5] = [Layout::Main, Layout::CrossDomain, Layout::Acsc, Layout::PerPrompt, Layout::PerClass];

    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Main => "main",
            Layout::CrossDomain => "cross_domain",
            Layout::Acsc => "acsc",
            Layout::PerPrompt => "per_prompt",
            Layout::PerClass => "per_class",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Layout::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown layout `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub layout: Layout,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        writer.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            writer.write_record(row).map_err(csv_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Columns padded to their widest cell; text left-aligned, numbers right-aligned.
    pub fn to_text(&self) -> String {
        let width = |s: &str| s.chars().count();
        let mut widths: Vec<usize> = self.header.iter().map(|h| width(h)).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(width(cell));
            }
        }
        let numeric = |s: &str| s == MISSING || s.trim_end_matches('*').parse::<f64>().is_ok();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let pad = " ".repeat(widths[i] - width(c));
                    if numeric(c) {
                        format!("{pad}{c}")
                    } else {
                        format!("{c}{pad}")
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("  "));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn signed_pct(x: f64) -> String {
    format!("{:+.2}", 100.0 * x)
}

struct CellIndex<'a> {
    cells: BTreeMap<(Domain, Domain, Task, HeadKind, ShotCount), &'a AggregateCell>,
}

impl<'a> CellIndex<'a> {
    fn new(cells: &'a [AggregateCell]) -> Self {
        // Provenance is not a table axis; the first (generic) cell wins.
        let mut map = BTreeMap::new();
        for cell in cells {
            let k = cell.key;
            map.entry((k.train_domain, k.test_domain, k.test_task, k.head, k.size)).or_insert(cell);
        }
        CellIndex { cells: map }
    }

    fn select(&self, keep: impl Fn(Domain, Domain, Task) -> bool) -> Vec<&'a AggregateCell> {
        self.cells
            .iter()
            .filter(|((tr, te, task, _, _), _)| keep(*tr, *te, *task))
            .map(|(_, c)| *c)
            .collect()
    }
}

fn sizes_of(cells: &[&AggregateCell]) -> Vec<ShotCount> {
    cells.iter().map(|c| c.key.size).collect::<BTreeSet<_>>().into_iter().collect()
}

fn heads_of(cells: &[&AggregateCell]) -> Vec<HeadKind> {
    cells.iter().map(|c| c.key.head).collect::<BTreeSet<_>>().into_iter().collect()
}

fn find<'a>(cells: &[&'a AggregateCell], head: HeadKind, size: ShotCount) -> Option<&'a AggregateCell> {
    cells.iter().copied().find(|c| c.key.head == head && c.key.size == size)
}

fn size_header(prefix: &[&str], sizes: &[ShotCount]) -> Vec<String> {
    let mut header: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    for size in sizes {
        header.push(format!("{size} Acc"));
        header.push(format!("{size} MF1"));
    }
    header
}

/// Whether `scores` beats `baseline` with a one-sided z-test at .05.
fn beats(scores: &[f64], baseline: &[f64], options: ZTestOptions) -> bool {
    z_test(scores, baseline, options).map(|r| r.significant_at_05).unwrap_or(false)
}

fn main_rows(cells: &[&AggregateCell], section: &str, options: ZTestOptions) -> Vec<Vec<String>> {
    let sizes = sizes_of(cells);
    let mut rows = Vec::new();
    for head in heads_of(cells) {
        let mut row = vec![section.to_string(), head.display_name().to_string()];
        let mut delta = vec![section.to_string(), format!("{} vs best baseline", head.display_name())];
        let mut any_delta = false;
        for &size in &sizes {
            let Some(cell) = find(cells, head, size) else {
                row.extend([MISSING.into(), MISSING.into()]);
                delta.extend([MISSING.into(), MISSING.into()]);
                continue;
            };
            let best = (!head.is_baseline())
                .then(|| {
                    HeadKind::ALL
                        .into_iter()
                        .filter(|h| h.is_baseline())
                        .filter_map(|h| find(cells, h, size))
                        .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy))
                })
                .flatten();
            let star = |ours: &[f64], theirs: &[f64]| if beats(ours, theirs, options) { "*" } else { "" };
            match best {
                Some(base) => {
                    row.push(format!("{}{}", pct(cell.accuracy), star(&cell.run_accuracies, &base.run_accuracies)));
                    row.push(format!("{}{}", pct(cell.macro_f1), star(&cell.run_macro_f1, &base.run_macro_f1)));
                    delta.push(signed_pct(cell.accuracy - base.accuracy));
                    delta.push(signed_pct(cell.macro_f1 - base.macro_f1));
                    any_delta = true;
                }
                None => {
                    row.push(pct(cell.accuracy));
                    row.push(pct(cell.macro_f1));
                    delta.extend([MISSING.into(), MISSING.into()]);
                }
            }
        }
        rows.push(row);
        if any_delta {
            rows.push(delta);
        }
    }
    rows
}

fn size_rows(cells: &[&AggregateCell], lead: &[String], sizes: &[ShotCount], head: HeadKind) -> Vec<String> {
    let mut row = lead.to_vec();
    for &size in sizes {
        match find(cells, head, size) {
            Some(c) => row.extend([pct(c.accuracy), pct(c.macro_f1)]),
            None => row.extend([MISSING.into(), MISSING.into()]),
        }
    }
    row
}

/// Aggregates `results` and renders one layout. Stars mark a one-sided
/// z-test win over the strongest baseline at the same size.
pub fn tabulate(results: &[RunResult], layout: Layout, options: ZTestOptions) -> Result<Table> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no results to tabulate".into()));
    }
    let cells = aggregate(results);
    let index = CellIndex::new(&cells);
    let (header, rows) = match layout {
        Layout::Main => {
            let mut all = Vec::new();
            for domain in Domain::ALL {
                all.extend(index.select(|tr, te, task| tr == domain && te == domain && task == Task::Atsc));
            }
            let sizes = sizes_of(&all);
            let mut rows = Vec::new();
            for domain in Domain::ALL {
                let cells = index.select(|tr, te, task| tr == domain && te == domain && task == Task::Atsc);
                if cells.is_empty() {
                    continue;
                }
                // Pad to the shared size set so every section has the same columns.
                let mut section = main_rows(&cells, domain.as_str(), options);
                let local = sizes_of(&cells);
                for row in &mut section {
                    let mut full = row[..2].to_vec();
                    for size in &sizes {
                        match local.iter().position(|s| s == size) {
                            Some(i) => full.extend(row[2 + 2 * i..4 + 2 * i].iter().cloned()),
                            None => full.extend([MISSING.into(), MISSING.into()]),
                        }
                    }
                    *row = full;
                }
                rows.extend(section);
            }
            (size_header(&["domain", "model"], &sizes), rows)
        }
        Layout::CrossDomain => {
            let cross = index.select(|tr, te, task| tr != te && task == Task::Atsc);
            let sizes = sizes_of(&cross);
            let mut rows = Vec::new();
            for test in Domain::ALL {
                let inside = index.select(|tr, te, task| tr == test && te == test && task == Task::Atsc);
                let across = index.select(|tr, te, task| tr != te && te == test && task == Task::Atsc);
                if across.is_empty() {
                    continue;
                }
                for head in heads_of(&across) {
                    for (setting, cells) in [("in", &inside), ("cross", &across)] {
                        let train = if setting == "in" { test } else { test.other() };
                        let lead = [
                            test.as_str().to_string(),
                            head.display_name().to_string(),
                            setting.to_string(),
                            train.as_str().to_string(),
                        ];
                        rows.push(size_rows(cells, &lead, &sizes, head));
                    }
                }
            }
            (size_header(&["test domain", "model", "setting", "train domain"], &sizes), rows)
        }
        Layout::Acsc => {
            let acsc = index.select(|_, _, task| task == Task::Acsc);
            let sizes = sizes_of(&acsc);
            let mut rows = Vec::new();
            for head in heads_of(&acsc) {
                for domain in Domain::ALL {
                    let cells = index.select(|_, te, task| te == domain && task == Task::Acsc);
                    if sizes.iter().all(|s| find(&cells, head, *s).is_none()) {
                        continue;
                    }
                    let lead = [domain.as_str().to_string(), head.display_name().to_string()];
                    rows.push(size_rows(&cells, &lead, &sizes, head));
                }
            }
            (size_header(&["domain", "model"], &sizes), rows)
        }
        Layout::PerPrompt => {
            let prompted = index.select(|tr, te, task| tr == te && task == Task::Atsc);
            let prompted: Vec<_> = prompted.into_iter().filter(|c| c.key.head.uses_template()).collect();
            let sizes = sizes_of(&prompted);
            let templates: BTreeSet<&String> = prompted.iter().flat_map(|c| c.per_template.keys()).collect();
            let mut rows = Vec::new();
            for domain in Domain::ALL {
                for head in heads_of(&prompted) {
                    for template in &templates {
                        let mut row = vec![domain.as_str().to_string(), head.display_name().to_string(), template.to_string()];
                        let mut any = false;
                        for &size in &sizes {
                            let metric = prompted
                                .iter()
                                .find(|c| c.key.head == head && c.key.size == size && c.key.test_domain == domain)
                                .and_then(|c| c.per_template.get(*template));
                            match metric {
                                Some(m) => {
                                    any = true;
                                    row.extend([pct(m.accuracy), pct(m.macro_f1)]);
                                }
                                None => row.extend([MISSING.into(), MISSING.into()]),
                            }
                        }
                        if any {
                            rows.push(row);
                        }
                    }
                }
            }
            (size_header(&["domain", "model", "template"], &sizes), rows)
        }
        Layout::PerClass => {
            let mut rows = Vec::new();
            for domain in Domain::ALL {
                let cells = index.select(|tr, te, task| tr == domain && te == domain && task == Task::Atsc);
                for head in heads_of(&cells) {
                    for size in sizes_of(&cells) {
                        let Some(cell) = find(&cells, head, size) else { continue };
                        let mut row = vec![domain.as_str().to_string(), head.display_name().to_string(), size.to_string()];
                        row.extend(Polarity::ALL.iter().map(|p| pct(cell.per_class_f1[p])));
                        rows.push(row);
                    }
                }
            }
            let header = ["domain", "model", "size", "positive F1", "negative F1", "neutral F1"];
            (header.iter().map(|s| s.to_string()).collect(), rows)
        }
    };
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("results have no cells for the {layout} layout")));
    }
    Ok(Table { layout, header, rows })
}
