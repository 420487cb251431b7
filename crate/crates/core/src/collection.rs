//! Rationale collection by causal intervention.
//!
//! Unbiased rationales come from label-guided intervention: the model explains
//! a revealed gold label, and the explanation is kept only if the label can be
//! re-derived from it alone. Biased rationales come from diversified
//! intervention: the model is shown a single demonstration of a different
//! label, and any wrong prediction it makes is recorded with its rationale.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::domain::{
    DataError, Demonstration, LabelSet, LabeledSample, Rationale, RationaleKind, RationaleSource, RationaleStore,
};
use crate::hashing::derive_seed;
use crate::llm::parse::{parse_derived_label, parse_re_response, ParseError};
use crate::llm::prompt::{render_lgi_step1, render_lgi_step2, WorkedExample};
use crate::llm::{complete, generate_prediction, CallLog, LlmBackend, LlmError, ParseOutcome, Phase, PromptSpec};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("unusable response: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{rejected} of {total} samples rejected, above the allowed fraction {limit}")]
    TooManyRejections { rejected: usize, total: usize, limit: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub lgi_retries: usize,
    pub di_attempts: usize,
    /// Abort when more than this fraction of samples yields no unbiased rationale.
    pub max_reject_fraction: f64,
    pub seed: u64,
    pub worked_example: WorkedExample,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            lgi_retries: 2,
            di_attempts: 3,
            max_reject_fraction: 0.5,
            seed: 0,
            worked_example: WorkedExample::semeval(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LgiOutcome {
    Accepted(Rationale),
    /// No attempt re-derived the gold label; holds each attempt's derived label.
    Rejected {
        derived: Vec<Option<String>>,
    },
}

/// Label-guided intervention for one sample, with up to `retries` extra attempts.
#[allow(clippy::too_many_arguments)]
pub fn induce_unbiased(
    sample: &LabeledSample,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    example: &WorkedExample,
    retries: usize,
    seed: u64,
) -> Result<LgiOutcome, CollectError> {
    let step1 = render_lgi_step1(example, sample);
    let id = Some(sample.id.as_str());
    let mut derived = Vec::new();
    let mut last_error: Option<CollectError> = None;
    for attempt in 0..=retries {
        let attempt_seed = derive_seed(seed, &["lgi", &sample.id, &attempt.to_string()]);
        let raw = match complete(backend, log, Phase::PreInference, id, &step1, attempt_seed) {
            Ok(raw) => raw,
            Err(e) => {
                last_error = Some(e.into());
                continue;
            }
        };
        let rationale = match parse_re_response(&raw, labels) {
            Ok(p) => p.rationale,
            Err(ParseError::UnknownLabel { rationale, .. }) if !rationale.is_empty() => rationale,
            Err(e) => {
                last_error = Some(e.into());
                continue;
            }
        };
        let step2 = render_lgi_step2(example, sample, &rationale, labels);
        let judged = match complete(backend, log, Phase::PreInference, id, &step2, attempt_seed) {
            Ok(raw) => parse_derived_label(&raw, labels),
            Err(e) => {
                last_error = Some(e.into());
                continue;
            }
        };
        if judged.as_ref() == Some(&sample.gold) {
            return Ok(LgiOutcome::Accepted(Rationale {
                sample_id: sample.id.clone(),
                text: rationale,
                predicted: sample.gold.clone(),
                kind: RationaleKind::Unbiased,
                source: RationaleSource::Lgi,
            }));
        }
        derived.push(judged.map(|l| l.name().to_string()));
    }
    match last_error {
        Some(e) if derived.is_empty() => Err(e),
        _ => Ok(LgiOutcome::Rejected { derived }),
    }
}

/// Picks one demonstration per attempt, preferring pairwise-distinct labels,
/// never the sample's own gold label and never the sample itself.
fn pick_interventions<'a>(
    sample: &LabeledSample,
    pool: &'a [Demonstration],
    attempts: usize,
    seed: u64,
) -> Vec<&'a Demonstration> {
    let mut by_label: BTreeMap<&str, Vec<&Demonstration>> = BTreeMap::new();
    for d in pool {
        if d.label != sample.gold && d.sample.id != sample.id {
            by_label.entry(d.label.name()).or_default().push(d);
        }
    }
    if by_label.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["di", &sample.id]));
    let mut groups: Vec<Vec<&Demonstration>> = by_label.into_values().collect();
    groups.shuffle(&mut rng);
    groups.iter_mut().for_each(|g| g.shuffle(&mut rng));
    // round-robin: first one demo of every label, then second ones, ...
    let depth = groups.iter().map(Vec::len).max().unwrap_or(0);
    (0..depth)
        .flat_map(|i| groups.iter().filter_map(move |g| g.get(i).copied()))
        .take(attempts)
        .collect()
}

/// Diversified intervention: one single-demonstration inference per attempt,
/// keeping every wrong prediction as a biased rationale.
#[allow(clippy::too_many_arguments)]
pub fn observe_biased(
    sample: &LabeledSample,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    pool: &[Demonstration],
    attempts: usize,
    seed: u64,
) -> Vec<Rationale> {
    let picks = pick_interventions(sample, pool, attempts, seed);
    if picks.is_empty() && attempts > 0 {
        warn!(sample = %sample.id, "no demonstration with a different label to intervene with");
    }
    let mut out: Vec<Rationale> = Vec::new();
    for (attempt, demo) in picks.into_iter().enumerate() {
        let demos = std::slice::from_ref(demo);
        let prompt = crate::llm::render_re_prompt(&PromptSpec::standard(demos, sample, labels));
        let attempt_seed = derive_seed(seed, &["di", &sample.id, &attempt.to_string()]);
        let g = generate_prediction(
            backend,
            log,
            Phase::PreInference,
            Some(&sample.id),
            &prompt,
            labels,
            attempt_seed,
            2,
        );
        if g.outcome == ParseOutcome::Fallback {
            warn!(sample = %sample.id, attempt, "intervention attempt produced no usable response");
            continue;
        }
        if g.label == sample.gold {
            continue;
        }
        let r = Rationale {
            sample_id: sample.id.clone(),
            text: g.rationale,
            predicted: g.label,
            kind: RationaleKind::Biased,
            source: RationaleSource::Di,
        };
        if !out.iter().any(|o| o.text == r.text && o.predicted == r.predicted) {
            out.push(r);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectReport {
    pub samples: usize,
    pub accepted: usize,
    pub rejected: Vec<String>,
    /// Samples whose every label-guided attempt failed outright, with the last error.
    pub failed: Vec<(String, String)>,
    pub biased: usize,
}

/// Runs label-guided intervention on every sample, then diversified
/// intervention using the accepted samples as the demonstration pool.
pub fn collect(
    samples: &[LabeledSample],
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    config: &CollectConfig,
) -> Result<(RationaleStore, CollectReport), CollectError> {
    let outcomes: Vec<Result<LgiOutcome, CollectError>> = samples
        .par_iter()
        .map(|s| {
            induce_unbiased(
                s,
                backend,
                log,
                labels,
                &config.worked_example,
                config.lgi_retries,
                config.seed,
            )
        })
        .collect();

    let mut store = RationaleStore::new();
    let mut report = CollectReport {
        samples: samples.len(),
        ..CollectReport::default()
    };
    let mut pool = Vec::new();
    for (sample, outcome) in samples.iter().zip(outcomes) {
        store.add_sample(sample.clone())?;
        match outcome {
            Ok(LgiOutcome::Accepted(r)) => {
                pool.push(Demonstration::new(sample.clone(), r.text.clone()));
                store.push(r)?;
                report.accepted += 1;
            }
            Ok(LgiOutcome::Rejected { derived }) => {
                warn!(sample = %sample.id, ?derived, "label-guided rationale rejected");
                report.rejected.push(sample.id.clone());
            }
            Err(e) => {
                warn!(sample = %sample.id, error = %e, "label-guided intervention failed");
                report.failed.push((sample.id.clone(), e.to_string()));
            }
        }
    }
    let lost = report.rejected.len() + report.failed.len();
    if !samples.is_empty() && lost as f64 / samples.len() as f64 > config.max_reject_fraction {
        return Err(CollectError::TooManyRejections {
            rejected: lost,
            total: samples.len(),
            limit: config.max_reject_fraction,
        });
    }

    let biased: Vec<Vec<Rationale>> = samples
        .par_iter()
        .map(|s| observe_biased(s, backend, log, labels, &pool, config.di_attempts, config.seed))
        .collect();
    for r in biased.into_iter().flatten() {
        if store.push(r)? {
            report.biased += 1;
        }
    }
    info!(
        samples = report.samples,
        accepted = report.accepted,
        rejected = report.rejected.len(),
        biased = report.biased,
        "collection finished"
    );
    Ok((store, report))
}
