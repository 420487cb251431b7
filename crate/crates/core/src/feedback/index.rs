//! Anchor sets per predicted label, the indicator score, and top-k retrieval.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeedbackError, LoopConfig};
use crate::domain::{Demonstration, LabelSet, Rationale, RationaleStore, RelationLabel};
use crate::supervisor::{dot, RationaleEncoder, SupervisorError};

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub sample_id: String,
    pub text: String,
    pub embedding: Vec<f64>,
}

/// Stored rationales grouped by predicted label, embedded once with the
/// supervisor that scores queries.
#[derive(Debug, Clone, Default)]
pub struct AnchorIndex {
    biased: BTreeMap<String, Vec<Anchor>>,
    unbiased: BTreeMap<String, Vec<Anchor>>,
    universe: HashSet<String>,
    demonstrations: HashMap<String, Demonstration>,
}

impl AnchorIndex {
    /// Indexes `store`. The label universe is `labels`; a query label outside
    /// it is treated as biased.
    pub fn build(
        encoder: &dyn RationaleEncoder,
        store: &RationaleStore,
        labels: &LabelSet,
    ) -> Result<Self, SupervisorError> {
        let embed_all = |rs: &[Rationale]| -> Result<BTreeMap<String, Vec<Anchor>>, SupervisorError> {
            let embedded = rs
                .par_iter()
                .map(|r| encoder.embed(&r.text))
                .collect::<Result<Vec<_>, _>>()?;
            let mut out: BTreeMap<String, Vec<Anchor>> = BTreeMap::new();
            for (r, embedding) in rs.iter().zip(embedded) {
                out.entry(r.predicted.name().to_string()).or_default().push(Anchor {
                    sample_id: r.sample_id.clone(),
                    text: r.text.clone(),
                    embedding,
                });
            }
            Ok(out)
        };
        Ok(Self {
            biased: embed_all(store.biased())?,
            unbiased: embed_all(store.unbiased())?,
            universe: labels.iter().map(|l| l.name().to_string()).collect(),
            demonstrations: store
                .demonstrations()
                .into_iter()
                .map(|d| (d.sample.id.clone(), d))
                .collect(),
        })
    }

    pub fn biased_for(&self, label: &str) -> &[Anchor] {
        self.biased.get(label).map_or(&[], Vec::as_slice)
    }

    pub fn unbiased_for(&self, label: &str) -> &[Anchor] {
        self.unbiased.get(label).map_or(&[], Vec::as_slice)
    }

    pub fn contains_label(&self, label: &str) -> bool {
        self.universe.contains(label)
    }

    /// Demonstration built from a sample's unbiased rationale, if it has one.
    pub fn demonstration(&self, sample_id: &str) -> Option<&Demonstration> {
        self.demonstrations.get(sample_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unbiased,
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub p_b: f64,
    pub verdict: Verdict,
}

impl Verification {
    fn from_score(p_b: f64) -> Self {
        let verdict = if p_b > 0.0 { Verdict::Biased } else { Verdict::Unbiased };
        Self { p_b, verdict }
    }
}

fn max_sim(query: &[f64], anchors: &[Anchor]) -> f64 {
    anchors
        .iter()
        .map(|a| dot(query, &a.embedding))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Indicator score for an already-embedded rationale.
pub fn verify_embedding(index: &AnchorIndex, query: &[f64], label: &str) -> Verification {
    if !index.contains_label(label) {
        return Verification::from_score(f64::INFINITY);
    }
    let biased = index.biased_for(label);
    if biased.is_empty() {
        return Verification::from_score(f64::NEG_INFINITY);
    }
    let unbiased = index.unbiased_for(label);
    if unbiased.is_empty() {
        return Verification::from_score(f64::INFINITY);
    }
    Verification::from_score(max_sim(query, biased) - max_sim(query, unbiased))
}

/// Scores rationale `r` for predicted label `y`: the best similarity to a
/// biased anchor of `y` minus the best similarity to an unbiased one; biased
/// iff strictly positive. A rationale that cannot be embedded (blank text) is
/// biased.
pub fn verify(encoder: &dyn RationaleEncoder, index: &AnchorIndex, r: &str, y: &RelationLabel) -> Verification {
    match encoder.embed(r) {
        Ok(e) => verify_embedding(index, &e, y.name()),
        Err(_) => Verification::from_score(f64::INFINITY),
    }
}

#[derive(PartialEq)]
struct Ranked {
    sim: f64,
    index: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    /// Greater means better: higher similarity, then lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Indices of the `k` largest similarities, best first, ties by ascending index.
pub fn top_k(sims: &[f64], k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (index, &sim) in sims.iter().enumerate() {
        heap.push(Reverse(Ranked { sim, index }));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut best: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    best.sort_by(|a, b| b.cmp(a));
    best.into_iter().map(|r| r.index).collect()
}

/// Feedback demonstrations for a biased prediction: the source samples of
/// the `k` biased anchors of `y` most similar to `r`, each shown with its
/// gold label and unbiased rationale, deduplicated by sample and truncated to
/// `feedback_demo_count`.
pub fn retrieve_feedback(
    encoder: &dyn RationaleEncoder,
    index: &AnchorIndex,
    r: &str,
    y: &RelationLabel,
    cfg: &LoopConfig,
) -> Result<Vec<Demonstration>, FeedbackError> {
    let anchors = index.biased_for(y.name());
    if !index.contains_label(y.name()) || anchors.is_empty() {
        return Err(FeedbackError::NoAnchors {
            label: y.name().to_string(),
        });
    }
    let query = encoder.embed(r)?;
    let sims: Vec<f64> = anchors.iter().map(|a| dot(&query, &a.embedding)).collect();
    let mut seen = HashSet::new();
    Ok(top_k(&sims, cfg.k)
        .into_iter()
        .map(|i| anchors[i].sample_id.as_str())
        .filter(|id| seen.insert(*id))
        .filter_map(|id| index.demonstration(id).cloned())
        .take(cfg.feedback_demo_count)
        .collect())
}
