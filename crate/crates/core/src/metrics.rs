//! Accuracy, macro F1, per-class F1 and two-mean z-tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::label::Polarity;

/// Metrics over one test split. `confusion[gold][predicted]` in [`Polarity::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<Polarity, f64>,
    pub confusion: [[usize; 3]; 3],
    #[serde(default)]
    pub fingerprint: String,
}

impl EvalReport {
    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = fingerprint.into();
        self
    }

    pub fn f1(&self, polarity: Polarity) -> f64 {
        self.per_class_f1[&polarity]
    }

    pub fn recall(&self, polarity: Polarity) -> f64 {
        let row = &self.confusion[polarity.index()];
        let support: usize = row.iter().sum();
        if support == 0 {
            0.0
        } else {
            row[polarity.index()] as f64 / support as f64
        }
    }
}

pub fn score(gold: &[Polarity], predicted: &[Polarity]) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty test set".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(predicted) {
        confusion[g.index()][p.index()] += 1;
    }
    Ok(report_from_confusion(confusion))
}

/// Accepts string labels, rejecting anything outside the three classes.
pub fn score_labels(gold: &[&str], predicted: &[&str]) -> Result<EvalReport> {
    let parse = |labels: &[&str]| labels.iter().map(|l| l.parse()).collect::<Result<Vec<Polarity>>>();
    score(&parse(gold)?, &parse(predicted)?)
}

fn report_from_confusion(confusion: [[usize; 3]; 3]) -> EvalReport {
    let n: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();
    let per_class_f1: BTreeMap<Polarity, f64> = Polarity::ALL
        .iter()
        .map(|&p| {
            let i = p.index();
            let tp = confusion[i][i];
            let fp: usize = (0..3).filter(|&g| g != i).map(|g| confusion[g][i]).sum();
            let fn_: usize = (0..3).filter(|&q| q != i).map(|q| confusion[i][q]).sum();
            let denom = 2 * tp + fp + fn_;
            // A class absent from both gold and predictions scores 0.
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
            (p, f1)
        })
        .collect();
    let macro_f1 = per_class_f1.values().sum::<f64>() / 3.0;
    EvalReport {
        n,
        accuracy: correct as f64 / n as f64,
        macro_f1,
        per_class_f1,
        confusion,
        fingerprint: String::new(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Alternative: mean(a) > mean(b).
    #[default]
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    #[default]
    Unpooled,
    Pooled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZTestOptions {
    #[serde(default)]
    pub sidedness: Sidedness,
    #[serde(default)]
    pub variance: VarianceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub group_a: Vec<f64>,
    pub group_b: Vec<f64>,
    pub z: f64,
    pub p: f64,
    pub significant_at_05: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Upper tail of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Two-mean z-test of `a` against `b` using sample variances.
pub fn z_test(a: &[f64], b: &[f64], options: ZTestOptions) -> Result<SignificanceResult> {
    for (name, xs) in [("a", a), ("b", b)] {
        if xs.len() < 2 {
            return Err(Error::InvalidInput(format!("group {name} needs at least two scores")));
        }
        if xs.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidInput(format!("group {name} has scores outside [0, 1]")));
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let se = match options.variance {
        VarianceMode::Unpooled => (va / na + vb / nb).sqrt(),
        VarianceMode::Pooled => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb)).sqrt()
        }
    };
    let diff = mean(a) - mean(b);
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let p = match options.sidedness {
        Sidedness::Greater => normal_sf(z),
        Sidedness::TwoSided => (2.0 * normal_sf(z.abs())).min(1.0),
    };
    Ok(SignificanceResult {
        group_a: a.to_vec(),
        group_b: b.to_vec(),
        z,
        p,
        significant_at_05: p < 0.05,
    })
}
