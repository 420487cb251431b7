//! Initial demonstration selection for the first generation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Demonstration, LabeledSample};
use crate::hashing::derive_seed;
use crate::supervisor::{extract_features, EncoderConfig, SparseFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitStrategy {
    #[default]
    #[serde(rename = "random")]
    Random,
    /// Nearest labeled samples by sentence similarity.
    #[serde(rename = "simcse-like")]
    Similar,
    /// A fixed list read from a file.
    #[serde(rename = "file")]
    File,
}

impl std::str::FromStr for InitStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "simcse-like" | "similar" => Ok(Self::Similar),
            "file" => Ok(Self::File),
            other => Err(format!("unknown initial demonstration strategy {other:?}")),
        }
    }
}

pub trait DemoSelector: Send + Sync {
    fn select(&self, sample: &LabeledSample) -> Vec<Demonstration>;
}

/// `count` demonstrations drawn uniformly per test sample.
#[derive(Debug, Clone)]
pub struct RandomSelector {
    pool: Vec<Demonstration>,
    count: usize,
    seed: u64,
}

impl RandomSelector {
    pub fn new(pool: Vec<Demonstration>, count: usize, seed: u64) -> Self {
        Self { pool, count, seed }
    }
}

impl DemoSelector for RandomSelector {
    fn select(&self, sample: &LabeledSample) -> Vec<Demonstration> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &["init-demos", &sample.id]));
        self.pool
            .iter()
            .filter(|d| d.sample.id != sample.id)
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, self.count)
            .map(|d| (*d).clone())
            .collect()
    }
}

fn sentence_text(sample: &LabeledSample) -> String {
    format!("{} {} {}", sample.sentence, sample.head, sample.tail)
}

fn cosine(a: &SparseFeatures, b: &SparseFeatures) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// The `count` labeled samples whose sentences are most similar to the test
/// sentence under hashed n-gram features, most similar first, ties by pool order.
#[derive(Debug, Clone)]
pub struct SimilaritySelector {
    pool: Vec<Demonstration>,
    features: Vec<SparseFeatures>,
    config: EncoderConfig,
    count: usize,
}

impl SimilaritySelector {
    pub fn new(pool: Vec<Demonstration>, count: usize) -> Self {
        let config = EncoderConfig::default();
        let features = pool
            .iter()
            .map(|d| extract_features(&config, &sentence_text(&d.sample)).unwrap_or_default())
            .collect();
        Self {
            pool,
            features,
            config,
            count,
        }
    }
}

impl DemoSelector for SimilaritySelector {
    fn select(&self, sample: &LabeledSample) -> Vec<Demonstration> {
        let query = extract_features(&self.config, &sentence_text(sample)).unwrap_or_default();
        let sims: Vec<f64> = self
            .pool
            .iter()
            .zip(&self.features)
            .map(|(d, f)| {
                if d.sample.id == sample.id {
                    f64::NEG_INFINITY
                } else {
                    cosine(&query, f)
                }
            })
            .collect();
        super::index::top_k(&sims, self.count)
            .into_iter()
            .filter(|&i| sims[i] > f64::NEG_INFINITY)
            .map(|i| self.pool[i].clone())
            .collect()
    }
}

/// The same demonstrations for every sample.
#[derive(Debug, Clone)]
pub struct FixedSelector {
    demos: Vec<Demonstration>,
}

impl FixedSelector {
    pub fn new(demos: Vec<Demonstration>) -> Self {
        Self { demos }
    }
}

impl DemoSelector for FixedSelector {
    fn select(&self, _sample: &LabeledSample) -> Vec<Demonstration> {
        self.demos.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LabelSet;

    fn demo(id: &str, sentence: &str, label: &str) -> Demonstration {
        let words: Vec<&str> = sentence.split(' ').collect();
        let s = LabeledSample::new(
            id,
            sentence,
            words[0],
            words[words.len() - 1],
            LabelSet::semeval().get(label).unwrap().clone(),
        )
        .unwrap();
        Demonstration::new(s, "r")
    }

    fn pool() -> Vec<Demonstration> {
        vec![
            demo("a", "cats chase mice", "Cause-Effect"),
            demo("b", "boxes contain apples", "Content-Container"),
            demo("c", "dogs chase cats", "Cause-Effect"),
            demo("d", "jars contain jam", "Content-Container"),
        ]
    }

    #[test]
    fn random_selection_is_seeded_and_excludes_self() {
        let sel = RandomSelector::new(pool(), 2, 3);
        let q = pool()[0].sample.clone();
        let a = sel.select(&q);
        assert_eq!(a.len(), 2);
        assert_eq!(a, sel.select(&q));
        assert!(a.iter().all(|d| d.sample.id != "a"));
    }

    #[test]
    fn similarity_prefers_overlapping_sentences() {
        let sel = SimilaritySelector::new(pool(), 1);
        let q = demo("q", "bins contain apples", "Content-Container").sample;
        assert_eq!(sel.select(&q)[0].sample.id, "b");
    }

    #[test]
    fn strategy_names() {
        assert_eq!("simcse-like".parse::<InitStrategy>().unwrap(), InitStrategy::Similar);
        assert!("nope".parse::<InitStrategy>().is_err());
        assert_eq!(
            serde_json::to_string(&InitStrategy::Similar).unwrap(),
            "\"simcse-like\""
        );
    }
}
