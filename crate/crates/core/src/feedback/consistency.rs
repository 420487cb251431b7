//! Self-consistency baseline: majority vote over independent generations.

use crate::domain::{LabelSet, RelationLabel};
use crate::hashing::derive_seed;
use crate::llm::{generate_prediction, render_re_prompt, CallLog, LlmBackend, ParseOutcome, Phase, PromptSpec};

/// Most frequent label; ties go to the label whose first occurrence is earliest.
pub fn majority_vote(candidates: &[RelationLabel]) -> Option<RelationLabel> {
    let mut tally: Vec<(&RelationLabel, usize)> = Vec::new();
    for c in candidates {
        match tally.iter_mut().find(|(l, _)| *l == c) {
            Some((_, n)) => *n += 1,
            None => tally.push((c, 1)),
        }
    }
    // max_by_key keeps the last maximum, so scan in reverse to favor earlier entries
    tally.into_iter().rev().max_by_key(|(_, n)| *n).map(|(l, _)| l.clone())
}

/// `n` generations with distinct derived seeds, then a majority vote over
/// the ones that parsed. Returns the label set's fallback when none did.
pub fn self_consistency(
    backend: &dyn LlmBackend,
    log: &CallLog,
    spec: &PromptSpec<'_>,
    n: usize,
    seed: u64,
) -> (RelationLabel, usize) {
    let prompt = render_re_prompt(spec);
    let id = spec.inference_sample.id.as_str();
    let mut calls = 0;
    let mut votes = Vec::with_capacity(n);
    for i in 0..n.max(1) {
        let g = generate_prediction(
            backend,
            log,
            Phase::InitialGeneration,
            Some(id),
            &prompt,
            spec.labelset,
            derive_seed(seed, &["self-consistency", id, &i.to_string()]),
            2,
        );
        calls += g.calls;
        if g.outcome != ParseOutcome::Fallback {
            votes.push(g.label);
        }
    }
    let label = majority_vote(&votes).unwrap_or_else(|| fallback(spec.labelset));
    (label, calls)
}

fn fallback(labels: &LabelSet) -> RelationLabel {
    labels.fallback().clone()
}
