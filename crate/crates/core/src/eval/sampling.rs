//! k-shot training set construction for sentences and documents.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::domain::{Document, LabelSet, LabeledSample};
use crate::hashing::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub label: String,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSample {
    pub samples: Vec<LabeledSample>,
    pub shortfalls: Vec<Shortfall>,
}

/// `min(k, available)` samples per label, drawn without replacement, ordered
/// by label-set order and then draw order. Each label has its own seeded
/// stream, so adding a label does not change the draws of the others.
pub fn sample_kshot_sentence(data: &[LabeledSample], labels: &LabelSet, k: usize, seed: u64) -> SentenceSample {
    let mut by_label: HashMap<&str, Vec<&LabeledSample>> = HashMap::new();
    for s in data {
        by_label.entry(s.gold.name()).or_default().push(s);
    }
    let mut out = SentenceSample {
        samples: Vec::new(),
        shortfalls: Vec::new(),
    };
    if k == 0 {
        return out;
    }
    for label in labels.iter() {
        let mut pool = by_label.remove(label.name()).unwrap_or_default();
        if pool.len() < k {
            warn!(
                label = label.name(),
                available = pool.len(),
                k,
                "fewer instances than k"
            );
            out.shortfalls.push(Shortfall {
                label: label.name().to_string(),
                available: pool.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["kshot", label.name()]));
        let take = k.min(pool.len());
        let (drawn, _) = pool.partial_shuffle(&mut rng, take);
        out.samples.extend(drawn.iter().map(|s| (*s).clone()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentSample {
    pub docs: Vec<Document>,
    /// Kept triplets per relation type at the end.
    pub q: f64,
    /// The corpus ran out before `q` exceeded `k`.
    pub exhausted: bool,
    /// For each kept document, the labels that were unfinished when it was admitted.
    pub admitted_for: Vec<Vec<String>>,
}

/// Greedy document sampling: draw documents in random order and keep one
/// when it has a triplet of a relation with fewer than `k` kept triplets,
/// until kept triplets per relation type exceed `k`. The relation count is
/// the number of non-negative labels.
pub fn sample_kshot_document(docs: &[Document], labels: &LabelSet, k: usize, seed: u64) -> DocumentSample {
    let relation_count = match labels.iter().filter(|l| !l.is_negative()).count() {
        0 => labels.len(),
        n => n,
    };
    let mut order: Vec<&Document> = docs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["kshot-doc"]));
    order.shuffle(&mut rng);

    let mut kept_per_label: HashMap<&str, usize> = HashMap::new();
    let mut out = DocumentSample {
        docs: Vec::new(),
        q: 0.0,
        exhausted: false,
        admitted_for: Vec::new(),
    };
    let mut total = 0usize;
    let mut draws = order.into_iter();
    while out.q <= k as f64 {
        let Some(doc) = draws.next() else {
            out.exhausted = true;
            warn!(
                kept = out.docs.len(),
                q = out.q,
                k,
                "document corpus exhausted before the stop rule"
            );
            break;
        };
        let mut unfinished: Vec<String> = Vec::new();
        for t in &doc.triplets {
            let name = t.relation.name();
            if kept_per_label.get(name).copied().unwrap_or(0) < k && !unfinished.iter().any(|u| u == name) {
                unfinished.push(name.to_string());
            }
        }
        if !unfinished.is_empty() {
            for t in &doc.triplets {
                *kept_per_label.entry(t.relation.name()).or_default() += 1;
            }
            total += doc.triplets.len();
            out.docs.push(doc.clone());
            out.admitted_for.push(unfinished);
        }
        out.q = total as f64 / relation_count as f64;
    }
    out
}
