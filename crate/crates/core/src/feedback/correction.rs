//! The verify, retrieve, regenerate loop for one test sample.

use tracing::debug;

use super::index::{retrieve_feedback, verify, AnchorIndex, Verdict};
use super::{Fallback, LoopConfig};
use crate::domain::{Demonstration, LabelSet, LabeledSample, Prediction};
use crate::hashing::derive_seed;
use crate::llm::{generate_prediction, render_re_prompt, CallLog, Generation, LlmBackend, Phase, PromptSpec};
use crate::supervisor::RationaleEncoder;

/// Seed of the generation at `iteration` for one sample. Iteration 0 is the
/// plain in-context prediction, so it is shared with the baseline.
pub fn generation_seed(master: u64, sample_id: &str, iteration: usize) -> u64 {
    derive_seed(master, &["generate", sample_id, &iteration.to_string()])
}

#[allow(clippy::too_many_arguments)]
fn generate(
    sample: &LabeledSample,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    demos: &[Demonstration],
    phase: Phase,
    seed: u64,
    max_calls: usize,
) -> Generation {
    let prompt = render_re_prompt(&PromptSpec::standard(demos, sample, labels));
    generate_prediction(backend, log, phase, Some(&sample.id), &prompt, labels, seed, max_calls)
}

/// Plain in-context prediction with the given demonstrations.
pub fn predict_icl(
    sample: &LabeledSample,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    demos: &[Demonstration],
    master_seed: u64,
) -> Prediction {
    let g = generate(
        sample,
        backend,
        log,
        labels,
        demos,
        Phase::InitialGeneration,
        generation_seed(master_seed, &sample.id, 0),
        2,
    );
    Prediction {
        rationale_text: g.rationale,
        label: g.label,
        raw_response: g.raw,
        iterations_used: 0,
        llm_calls: g.calls,
        p_b_trace: Vec::new(),
    }
}

fn demo_ids(demos: &[Demonstration]) -> Vec<&str> {
    demos.iter().map(|d| d.sample.id.as_str()).collect()
}

/// Generates with `initial_demos`, then while the supervisor judges the
/// rationale biased, regenerates with feedback demonstrations retrieved
/// through the most similar biased anchors.
///
/// At most `1 + max_iters` backend calls are made, parse retries included.
/// When no iterate verifies as unbiased the configured fallback decides the
/// answer. The loop also stops early when a round would reuse exactly the
/// previous round's demonstrations after an unchanged prediction.
#[allow(clippy::too_many_arguments)]
pub fn predict_with_feedback(
    sample: &LabeledSample,
    backend: &dyn LlmBackend,
    log: &CallLog,
    labels: &LabelSet,
    encoder: &dyn RationaleEncoder,
    index: &AnchorIndex,
    initial_demos: &[Demonstration],
    cfg: &LoopConfig,
    master_seed: u64,
) -> Prediction {
    let budget = 1 + cfg.max_iters;
    let mut calls = 0;
    let mut demos: Vec<Demonstration> = initial_demos.to_vec();
    let mut iterates: Vec<(Generation, f64)> = Vec::new();
    let mut round = 0;
    loop {
        let phase = if round == 0 {
            Phase::InitialGeneration
        } else {
            Phase::Correction
        };
        let max_calls = (1 + cfg.parse_retries).min(budget - calls);
        let g = generate(
            sample,
            backend,
            log,
            labels,
            &demos,
            phase,
            generation_seed(master_seed, &sample.id, round),
            max_calls,
        );
        calls += g.calls;
        let v = verify(encoder, index, &g.rationale, &g.label);
        debug!(sample = %sample.id, round, label = g.label.name(), p_b = v.p_b, "verified");
        iterates.push((g, v.p_b));
        if v.verdict == Verdict::Unbiased || calls >= budget {
            break;
        }
        let (g, _) = iterates.last().expect("just pushed");
        let next = match retrieve_feedback(encoder, index, &g.rationale, &g.label, cfg) {
            Ok(d) if !d.is_empty() => d,
            _ => initial_demos.to_vec(),
        };
        let unchanged = iterates.len() >= 2 && iterates[iterates.len() - 2].0.label == g.label;
        if unchanged && demo_ids(&next) == demo_ids(&demos) {
            debug!(sample = %sample.id, round, "feedback reached a fixed point");
            break;
        }
        demos = next;
        round += 1;
    }

    let p_b_trace: Vec<f64> = iterates.iter().map(|(_, p)| *p).collect();
    let accepted = iterates.last().is_some_and(|(_, p)| *p <= 0.0);
    let pick = if accepted || cfg.fallback == Fallback::LastPrediction {
        iterates.len() - 1
    } else {
        // smallest score, earliest on ties
        (0..iterates.len())
            .min_by(|&a, &b| iterates[a].1.total_cmp(&iterates[b].1).then(a.cmp(&b)))
            .expect("at least one iterate")
    };
    let (g, _) = iterates.swap_remove(pick);
    Prediction {
        rationale_text: g.rationale,
        label: g.label,
        raw_response: g.raw,
        iterations_used: round,
        llm_calls: calls,
        p_b_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Rationale, RationaleKind, RationaleSource, RationaleStore, RelationLabel};
    use crate::llm::{BiasModel, Completion, LlmError, MockBackend};
    use crate::supervisor::SupervisorError;

    fn ls() -> LabelSet {
        LabelSet::semeval()
    }

    fn label(name: &str) -> RelationLabel {
        ls().get(name).unwrap().clone()
    }

    /// Flags any rationale mentioning "Content" as close to the biased anchor.
    struct Keyword;

    impl RationaleEncoder for Keyword {
        fn embed(&self, text: &str) -> crate::supervisor::Result<Vec<f64>> {
            if text.trim().is_empty() {
                return Err(SupervisorError::EmptyText);
            }
            Ok(
                if text.contains("BIASED") || text.contains("\"Content\"") && text.contains("into") {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                },
            )
        }
    }

    const ED: &str = "Entity-Destination";
    const CC: &str = "Content-Container";

    fn sample(id: &str, gold: &str, verb: &str) -> LabeledSample {
        LabeledSample::new(
            id,
            format!("the {id}ball was {verb} the {id}box"),
            format!("{id}ball"),
            format!("{id}box"),
            label(gold),
        )
        .unwrap()
    }

    fn store() -> RationaleStore {
        let mut s = RationaleStore::new();
        let e = sample("e", ED, "moved into");
        let c = sample("c", CC, "kept inside");
        s.add_sample(e).unwrap();
        s.add_sample(c).unwrap();
        for (id, pred, text, kind) in [
            ("e", ED, "plain e", RationaleKind::Unbiased),
            ("e", CC, "BIASED e", RationaleKind::Biased),
            ("c", CC, "plain c", RationaleKind::Unbiased),
        ] {
            s.push(Rationale {
                sample_id: id.into(),
                text: text.into(),
                predicted: label(pred),
                kind,
                source: RationaleSource::Di,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn unbiased_first_answer_costs_one_call() {
        let st = store();
        let idx = AnchorIndex::build(&Keyword, &st, &ls()).unwrap();
        let t = sample("t", CC, "kept inside");
        let backend = MockBackend::new(BiasModel::new(0.0), ls()).unwrap().with_samples([&t]);
        let log = CallLog::new();
        let p = predict_with_feedback(
            &t,
            &backend,
            &log,
            &ls(),
            &Keyword,
            &idx,
            &[],
            &LoopConfig::default(),
            1,
        );
        assert_eq!((p.llm_calls, p.iterations_used), (1, 0));
        assert_eq!(p.label.name(), CC);
        assert_eq!(log.calls().len(), 1);
    }

    #[test]
    fn steered_mock_is_corrected_in_one_round() {
        let st = store();
        let idx = AnchorIndex::build(&Keyword, &st, &ls()).unwrap();
        let t = sample("t", ED, "moved into");
        let bias = BiasModel::new(1.0).with_confusion(ED, CC, 1.0);
        let backend = MockBackend::new(bias, ls()).unwrap().with_samples([&t]);
        let p = predict_with_feedback(
            &t,
            &backend,
            &CallLog::new(),
            &ls(),
            &Keyword,
            &idx,
            &[],
            &LoopConfig::default(),
            1,
        );
        assert_eq!(p.label.name(), ED);
        assert_eq!((p.llm_calls, p.iterations_used), (2, 1));
        assert_eq!(p.p_b_trace.len(), 2);
        assert!(p.p_b_trace[0] > 0.0 && p.p_b_trace[1] <= 0.0);
    }

    #[test]
    fn budget_is_respected_and_min_score_is_returned() {
        let mut st = store();
        for (id, gold) in [("x", ED), ("y", "Cause-Effect")] {
            st.add_sample(sample(id, gold, "moved into")).unwrap();
        }
        for (id, pred, text, kind) in [
            ("x", ED, "plain x", RationaleKind::Unbiased),
            ("x", "Cause-Effect", "BIASED x", RationaleKind::Biased),
            ("y", "Cause-Effect", "plain y", RationaleKind::Unbiased),
        ] {
            st.push(Rationale {
                sample_id: id.into(),
                text: text.into(),
                predicted: label(pred),
                kind,
                source: RationaleSource::Di,
            })
            .unwrap();
        }
        let idx = AnchorIndex::build(&Keyword, &st, &ls()).unwrap();
        let t = sample("t", ED, "moved into");
        // always biased; the label alternates so feedback never repeats
        let counter = std::sync::atomic::AtomicUsize::new(0);
        let backend = move |_: &str, _: u64| -> Result<Completion, LlmError> {
            let i = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let label = if i.is_multiple_of(2) { CC } else { "Cause-Effect" };
            Ok(Completion::text(format!(
                "Reasoning Explanations: BIASED {i}\nPrediction: is \"{label}\""
            )))
        };
        let cfg = LoopConfig {
            max_iters: 3,
            ..LoopConfig::default()
        };
        let p = predict_with_feedback(&t, &backend, &CallLog::new(), &ls(), &Keyword, &idx, &[], &cfg, 1);
        assert_eq!((p.llm_calls, p.iterations_used), (4, 3));
        assert_eq!(p.p_b_trace, vec![1.0; 4]);
        // all scores tie, so the earliest iterate wins
        assert_eq!(p.rationale_text, "BIASED 0");
        let last = predict_with_feedback(
            &t,
            &backend,
            &CallLog::new(),
            &ls(),
            &Keyword,
            &idx,
            &[],
            &LoopConfig {
                fallback: Fallback::LastPrediction,
                ..cfg
            },
            1,
        );
        assert_eq!(last.rationale_text, "BIASED 7");
    }

    #[test]
    fn parse_failures_consume_budget() {
        let st = store();
        let idx = AnchorIndex::build(&Keyword, &st, &ls()).unwrap();
        let t = sample("t", ED, "moved into");
        let backend = |_: &str, _: u64| -> Result<Completion, LlmError> { Ok(Completion::text("")) };
        let cfg = LoopConfig {
            max_iters: 2,
            ..LoopConfig::default()
        };
        let p = predict_with_feedback(&t, &backend, &CallLog::new(), &ls(), &Keyword, &idx, &[], &cfg, 1);
        assert!(p.llm_calls <= 3);
        assert_eq!(p.label.name(), "Other");
    }

    #[test]
    fn fixed_point_short_circuits() {
        let st = store();
        let idx = AnchorIndex::build(&Keyword, &st, &ls()).unwrap();
        let t = sample("t", ED, "moved into");
        let backend = |_: &str, _: u64| -> Result<Completion, LlmError> {
            Ok(Completion::text(format!(
                "Reasoning Explanations: BIASED\nPrediction: is \"{CC}\""
            )))
        };
        let p = predict_with_feedback(
            &t,
            &backend,
            &CallLog::new(),
            &ls(),
            &Keyword,
            &idx,
            &[],
            &LoopConfig::default(),
            1,
        );
        // round 0 with no demos, round 1 with feedback, then the same feedback again
        assert_eq!(p.llm_calls, 2);
        assert_eq!(p.label.name(), CC);
    }

    #[test]
    fn iteration_zero_matches_icl() {
        let t = sample("t", ED, "moved into");
        let bias = BiasModel::new(0.0).with_confusion(ED, CC, 0.5);
        let backend = MockBackend::new(bias, ls()).unwrap().with_samples([&t]);
        let st = store();
        let idx = AnchorIndex::build(&Keyword, &st, &ls()).unwrap();
        for seed in 0..20 {
            let icl = predict_icl(&t, &backend, &CallLog::new(), &ls(), &[], seed);
            let srvf = predict_with_feedback(
                &t,
                &backend,
                &CallLog::new(),
                &ls(),
                &Keyword,
                &idx,
                &[],
                &LoopConfig::default(),
                seed,
            );
            if srvf.llm_calls == 1 {
                assert_eq!(icl.label, srvf.label);
                assert_eq!(icl.raw_response, srvf.raw_response);
            }
        }
    }
}
