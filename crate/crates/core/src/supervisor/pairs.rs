//! Positive and negative rationale pairs for contrastive training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::domain::{RationaleKind, RationaleStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairClass {
    /// Two unbiased rationales with the same gold label from different samples.
    SameGoldUnbiased,
    /// Two biased rationales from different samples with equal (gold, predicted).
    SameBiasSituation,
    /// A biased and an unbiased rationale of the same sample.
    SameSampleBiasedVsUnbiased,
    /// Two biased rationales whose (gold, predicted) differ.
    DifferentBiasSituations,
}

impl PairClass {
    pub const ALL: [PairClass; 4] = [
        PairClass::SameGoldUnbiased,
        PairClass::SameBiasSituation,
        PairClass::SameSampleBiasedVsUnbiased,
        PairClass::DifferentBiasSituations,
    ];

    pub fn is_positive(self) -> bool {
        matches!(self, PairClass::SameGoldUnbiased | PairClass::SameBiasSituation)
    }
}

/// Indices into [`PairBatch::texts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub class: PairClass,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairBatch {
    pub texts: Vec<String>,
    pub pos: Vec<Pair>,
    pub neg: Vec<Pair>,
}

impl PairBatch {
    pub fn count(&self, class: PairClass) -> usize {
        let list = if class.is_positive() { &self.pos } else { &self.neg };
        list.iter().filter(|p| p.class == class).count()
    }

    pub fn empty_classes(&self) -> Vec<PairClass> {
        PairClass::ALL.into_iter().filter(|c| self.count(*c) == 0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSamplerConfig {
    /// Above this many candidate pairs, each class is subsampled.
    pub enumeration_cutoff: usize,
    pub per_class_quota: usize,
    pub seed: u64,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        Self {
            enumeration_cutoff: 1_000_000,
            per_class_quota: 50_000,
            seed: 0,
        }
    }
}

/// What the pair predicates need to know about one rationale.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Item<'a> {
    pub sample: &'a str,
    pub gold: &'a str,
    pub predicted: &'a str,
    pub biased: bool,
}

/// The class of an unordered pair, or `None` when it belongs to no class.
pub(crate) fn classify(x: &Item<'_>, y: &Item<'_>) -> Option<PairClass> {
    match (x.biased, y.biased) {
        (false, false) => (x.gold == y.gold && x.sample != y.sample).then_some(PairClass::SameGoldUnbiased),
        (true, true) => {
            if (x.gold, x.predicted) != (y.gold, y.predicted) {
                Some(PairClass::DifferentBiasSituations)
            } else if x.sample != y.sample {
                Some(PairClass::SameBiasSituation)
            } else {
                None
            }
        }
        _ => (x.sample == y.sample).then_some(PairClass::SameSampleBiasedVsUnbiased),
    }
}

/// Enumerates every pair of every class, or reservoir-samples up to
/// `per_class_quota` pairs per class when the store has more than
/// `enumeration_cutoff` candidate pairs. Texts are the unbiased rationales
/// followed by the biased ones, in store order.
pub fn build_pairs(store: &RationaleStore, config: &PairSamplerConfig) -> PairBatch {
    let rationales: Vec<_> = store.unbiased().iter().chain(store.biased()).collect();
    let items: Vec<Item<'_>> = rationales
        .iter()
        .map(|r| Item {
            sample: &r.sample_id,
            gold: store
                .sample(&r.sample_id)
                .map(|s| s.gold.name())
                .expect("store invariant: every rationale resolves"),
            predicted: r.predicted.name(),
            biased: r.kind == RationaleKind::Biased,
        })
        .collect();
    let n = items.len();
    let candidates = n.saturating_mul(n.saturating_sub(1)) / 2;
    let sampling = candidates > config.enumeration_cutoff;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reservoirs: [Vec<Pair>; 4] = Default::default();
    let mut seen = [0usize; 4];
    for a in 0..n {
        for b in a + 1..n {
            let Some(class) = classify(&items[a], &items[b]) else {
                continue;
            };
            let slot = class as usize;
            let pair = Pair { a, b, class };
            seen[slot] += 1;
            if !sampling || reservoirs[slot].len() < config.per_class_quota {
                reservoirs[slot].push(pair);
            } else {
                let j = rng.gen_range(0..seen[slot]);
                if j < config.per_class_quota {
                    reservoirs[slot][j] = pair;
                }
            }
        }
    }
    if sampling {
        reservoirs.iter_mut().for_each(|r| r.sort_by_key(|p| (p.a, p.b)));
    }
    let mut batch = PairBatch {
        texts: rationales.iter().map(|r| r.text.clone()).collect(),
        ..PairBatch::default()
    };
    for (class, pairs) in PairClass::ALL.into_iter().zip(reservoirs) {
        if class.is_positive() {
            batch.pos.extend(pairs);
        } else {
            batch.neg.extend(pairs);
        }
    }
    for class in batch.empty_classes() {
        warn!(?class, "pair class is empty");
    }
    batch
}
