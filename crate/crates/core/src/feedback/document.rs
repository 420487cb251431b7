//! Document-level prediction: keep verified triplets, regenerate the rest
//! with a demonstration document chosen from the biased ones.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::{debug, warn};

use super::index::{verify, AnchorIndex, Verdict};
use super::LoopConfig;
use crate::domain::{Document, LabelSet, Triplet};
use crate::hashing::derive_seed;
use crate::llm::parse::{parse_pairs, parse_triplets};
use crate::llm::prompt::{render_doc_pair_prompt, render_doc_triplet_prompt};
use crate::llm::{complete, CallLog, LlmBackend, Phase};
use crate::supervisor::RationaleEncoder;

#[derive(Debug, Clone, PartialEq)]
pub struct DocPrediction {
    pub triplets: Vec<Triplet>,
    pub llm_calls: usize,
    /// Two-stage generations performed, the initial one included.
    pub rounds: usize,
}

/// Labeled document sharing the most relation labels with `biased`, earliest on ties.
fn select_demo<'a>(labeled: &[&'a Document], biased: &[Triplet]) -> Option<&'a Document> {
    let wanted: HashSet<&str> = biased.iter().map(|t| t.relation.name()).collect();
    let mut best: Option<(&'a Document, usize)> = None;
    for &d in labeled {
        let shared = d.relations().into_iter().filter(|r| wanted.contains(r.name())).count();
        if best.is_none_or(|(_, s)| shared > s) {
            best = Some((d, shared));
        }
    }
    best.map(|(d, _)| d)
}

/// Stage one (entity pairs) then stage two (triplets). Parse failures drop
/// only the malformed entries; backend failures yield no triplets.
#[allow(clippy::too_many_arguments)]
fn two_stage(
    doc: &Document,
    demo: Option<&Document>,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    phase: Phase,
    seed: u64,
    calls: &mut usize,
) -> Vec<Triplet> {
    let id = Some(doc.id.as_str());
    let pair_prompt = render_doc_pair_prompt(demo, doc, labels);
    *calls += 1;
    let pairs = match complete(backend, log, phase, id, &pair_prompt, seed) {
        Ok(raw) => parse_pairs(&raw),
        Err(e) => {
            warn!(doc = %doc.id, error = %e, "entity pair extraction failed");
            return Vec::new();
        }
    };
    let pairs: Vec<(String, String)> = pairs
        .into_iter()
        .filter(|(h, t)| doc.entities.contains(h) && doc.entities.contains(t))
        .collect();
    if pairs.is_empty() {
        return Vec::new();
    }
    let triplet_prompt = render_doc_triplet_prompt(demo, doc, &pairs, labels);
    *calls += 1;
    match complete(backend, log, phase, id, &triplet_prompt, seed) {
        Ok(raw) => parse_triplets(&raw, labels)
            .into_iter()
            .filter(|t| pairs.iter().any(|(h, tl)| *h == t.head && *tl == t.tail))
            .collect(),
        Err(e) => {
            warn!(doc = %doc.id, error = %e, "triplet generation failed");
            Vec::new()
        }
    }
}

/// Runs the document loop for `cfg.max_iters` rounds: every triplet whose
/// explanation verifies as unbiased joins the output set; the biased ones
/// choose the next demonstration document. Stops early once a round has no
/// biased triplets.
#[allow(clippy::too_many_arguments)]
pub fn predict_document(
    doc: &Document,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    encoder: &dyn RationaleEncoder,
    index: &AnchorIndex,
    labeled: &[Document],
    cfg: &LoopConfig,
    master_seed: u64,
) -> DocPrediction {
    let mut out = DocPrediction {
        triplets: Vec::new(),
        llm_calls: 0,
        rounds: 0,
    };
    if doc.entities.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &["doc-demo", &doc.id]));
    let pool: Vec<&Document> = labeled.iter().filter(|d| d.id != doc.id).collect();
    let mut demo = (!pool.is_empty()).then(|| pool[rng.gen_range(0..pool.len())]);
    let seed_for = |round: usize| derive_seed(master_seed, &["doc", &doc.id, &round.to_string()]);

    let mut current = two_stage(
        doc,
        demo,
        backend,
        log,
        labels,
        Phase::InitialGeneration,
        seed_for(0),
        &mut out.llm_calls,
    );
    out.rounds = 1;
    let mut kept: HashSet<(String, String, String)> = HashSet::new();
    for round in 1..=cfg.max_iters {
        let mut biased = Vec::new();
        for t in current {
            if verify(encoder, index, &t.explanation, &t.relation).verdict == Verdict::Unbiased {
                let key = (t.head.clone(), t.relation.name().to_string(), t.tail.clone());
                if kept.insert(key) {
                    out.triplets.push(t);
                }
            } else {
                biased.push(t);
            }
        }
        debug!(doc = %doc.id, round, biased = biased.len(), kept = out.triplets.len(), "document round");
        if biased.is_empty() {
            break;
        }
        demo = select_demo(&pool, &biased);
        current = two_stage(
            doc,
            demo,
            backend,
            log,
            labels,
            Phase::Correction,
            seed_for(round),
            &mut out.llm_calls,
        );
        out.rounds += 1;
    }
    out
}
