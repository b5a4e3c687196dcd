//! Label and domain vocabularies shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Sentiment polarity after preprocessing.
///
/// The declaration order doubles as the argmax tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Polarity> {
        Polarity::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Polarity as annotated in the raw benchmark files, `conflict` included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawPolarity {
    Positive,
    Negative,
    Neutral,
    Conflict,
}

impl RawPolarity {
    pub fn resolved(self) -> Option<Polarity> {
        match self {
            RawPolarity::Positive => Some(Polarity::Positive),
            RawPolarity::Negative => Some(Polarity::Negative),
            RawPolarity::Neutral => Some(Polarity::Neutral),
            RawPolarity::Conflict => None,
        }
    }
}

impl FromStr for RawPolarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "positive" => Ok(RawPolarity::Positive),
            "negative" => Ok(RawPolarity::Negative),
            "neutral" => Ok(RawPolarity::Neutral),
            "conflict" => Ok(RawPolarity::Conflict),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Laptops,
    Restaurants,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Laptops, Domain::Restaurants];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Laptops => "laptops",
            Domain::Restaurants => "restaurants",
        }
    }

    /// Category of the unlabeled review corpus used to adapt a backend to this domain.
    pub fn corpus_category(self) -> &'static str {
        match self {
            Domain::Laptops => "electronics",
            Domain::Restaurants => "restaurants",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Laptops => Domain::Restaurants,
            Domain::Restaurants => Domain::Laptops,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "laptops" => Ok(Domain::Laptops),
            "restaurants" => Ok(Domain::Restaurants),
            other => Err(Error::InvalidInput(format!("unknown domain `{other}`"))),
        }
    }
}

/// Whether an aspect is an explicit term (ATSC) or a predefined category (ACSC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AspectKind {
    Term,
    Category,
}

/// Which SemEval subtask a file is read for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Atsc,
    Acsc,
}

impl Task {
    pub fn aspect_kind(self) -> AspectKind {
        match self {
            Task::Atsc => AspectKind::Term,
            Task::Acsc => AspectKind::Category,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "atsc" => Ok(Task::Atsc),
            "acsc" => Ok(Task::Acsc),
            other => Err(Error::InvalidInput(format!("unknown task `{other}`"))),
        }
    }
}
