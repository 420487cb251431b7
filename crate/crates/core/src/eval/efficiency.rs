//! Wall-clock and call accounting per pipeline phase.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::llm::{CallLog, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub pre_inference_seconds: f64,
    pub initial_generation_seconds: f64,
    pub correction_seconds: f64,
    pub llm_calls: usize,
    /// Share of samples with at least one correction call.
    pub corrected_fraction: f64,
}

/// Sums call latencies and recorded spans per phase. Times are summed over
/// calls, so with concurrent workers they exceed elapsed time.
pub fn efficiency_report(log: &CallLog) -> EfficiencyReport {
    let mut seconds: HashMap<Phase, f64> = HashMap::new();
    let mut touched: BTreeSet<String> = BTreeSet::new();
    let mut corrected: BTreeSet<String> = BTreeSet::new();
    let calls = log.calls();
    for c in &calls {
        *seconds.entry(c.phase).or_default() += c.latency.as_secs_f64();
        if let Some(id) = &c.sample_id {
            if c.phase != Phase::PreInference {
                touched.insert(id.clone());
            }
            if c.phase == Phase::Correction {
                corrected.insert(id.clone());
            }
        }
    }
    for (phase, d) in log.spans() {
        *seconds.entry(phase).or_default() += d.as_secs_f64();
    }
    let get = |p| seconds.get(&p).copied().unwrap_or(0.0);
    EfficiencyReport {
        pre_inference_seconds: get(Phase::PreInference),
        initial_generation_seconds: get(Phase::InitialGeneration),
        correction_seconds: get(Phase::Correction),
        llm_calls: calls.len(),
        corrected_fraction: if touched.is_empty() {
            0.0
        } else {
            corrected.len() as f64 / touched.len() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::CallRecord;
    use std::time::Duration;

    fn call(phase: Phase, id: &str, ms: u64) -> CallRecord {
        CallRecord {
            phase,
            sample_id: Some(id.into()),
            prompt_chars: 1,
            response_chars: 1,
            prompt_tokens: None,
            completion_tokens: None,
            latency: Duration::from_millis(ms),
            ok: true,
        }
    }

    #[test]
    fn nothing_corrected() {
        let log = CallLog::new();
        log.record(call(Phase::InitialGeneration, "a", 10));
        log.record(call(Phase::InitialGeneration, "b", 10));
        let r = efficiency_report(&log);
        assert_eq!(r.correction_seconds, 0.0);
        assert_eq!(r.corrected_fraction, 0.0);
        assert_eq!(r.llm_calls, 2);
    }

    #[test]
    fn every_sample_corrected_once() {
        let log = CallLog::new();
        for id in ["a", "b", "c"] {
            log.record(call(Phase::InitialGeneration, id, 5));
            log.record(call(Phase::Correction, id, 7));
        }
        log.record(call(Phase::PreInference, "train", 3));
        log.record_span(Phase::PreInference, Duration::from_millis(100));
        let r = efficiency_report(&log);
        assert_eq!(r.llm_calls - 1, 2 * 3);
        assert_eq!(r.corrected_fraction, 1.0);
        assert!((r.pre_inference_seconds - 0.103).abs() < 1e-9);
        assert!((r.correction_seconds - 0.021).abs() < 1e-9);
    }
}
