//! Prediction files: one JSON object per test sample.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{DataError, LabeledSample, Prediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub rationale: String,
    /// Infinite scores are written as the strings `"+inf"` and `"-inf"`.
    #[serde(default, serialize_with = "write_scores", deserialize_with = "read_scores")]
    pub p_b_trace: Vec<f64>,
    #[serde(default)]
    pub iterations_used: usize,
    #[serde(default)]
    pub llm_calls: usize,
}

impl PredictionRecord {
    pub fn new(sample: &LabeledSample, p: &Prediction) -> Self {
        Self {
            id: sample.id.clone(),
            label: p.label.name().to_string(),
            rationale: p.rationale_text.clone(),
            p_b_trace: p.p_b_trace.clone(),
            iterations_used: p.iterations_used,
            llm_calls: p.llm_calls,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Score {
    Finite(f64),
    Named(String),
}

fn write_scores<S: Serializer>(scores: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let out: Vec<Score> = scores
        .iter()
        .map(|&v| match v {
            f64::INFINITY => Score::Named("+inf".into()),
            f64::NEG_INFINITY => Score::Named("-inf".into()),
            v if v.is_nan() => Score::Named("nan".into()),
            v => Score::Finite(v),
        })
        .collect();
    out.serialize(s)
}

fn read_scores<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Vec::<Score>::deserialize(d)?
        .into_iter()
        .map(|s| match s {
            Score::Finite(v) => Ok(v),
            Score::Named(n) => match n.as_str() {
                "+inf" | "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("unknown score {other:?}"))),
            },
        })
        .collect()
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), DataError> {
    crate::domain::write_jsonl(path, records.iter())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Pairs each gold sample with its prediction by id. Samples without a
/// prediction are returned separately; predictions for unknown ids are ignored.
pub fn join_predictions<'a>(
    gold: &'a [LabeledSample],
    preds: &'a [PredictionRecord],
) -> (Vec<(&'a str, &'a str)>, Vec<&'a str>) {
    let by_id: HashMap<&str, &str> = preds.iter().map(|p| (p.id.as_str(), p.label.as_str())).collect();
    let mut pairs = Vec::with_capacity(gold.len());
    let mut missing = Vec::new();
    for s in gold {
        match by_id.get(s.id.as_str()) {
            Some(label) => pairs.push((s.gold.name(), *label)),
            None => missing.push(s.id.as_str()),
        }
    }
    (pairs, missing)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_scores_round_trip_as_strings() {
        let r = PredictionRecord {
            id: "a".into(),
            label: "Other".into(),
            rationale: "r".into(),
            p_b_trace: vec![f64::INFINITY, 0.25, f64::NEG_INFINITY],
            iterations_used: 2,
            llm_calls: 3,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""p_b_trace":["+inf",0.25,"-inf"]"#), "{json}");
        let back: PredictionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn minimal_record_and_join() {
        let r: PredictionRecord = serde_json::from_str(r#"{"id":"s1","label":"Cause-Effect"}"#).unwrap();
        let labels = crate::domain::LabelSet::semeval();
        let gold = vec![
            LabeledSample::new("s1", "a b", "a", "b", labels.get("Cause-Effect").unwrap().clone()).unwrap(),
            LabeledSample::new("s2", "a b", "a", "b", labels.get("Other").unwrap().clone()).unwrap(),
        ];
        let preds = vec![r];
        let (pairs, missing) = join_predictions(&gold, &preds);
        assert_eq!(pairs, vec![("Cause-Effect", "Cause-Effect")]);
        assert_eq!(missing, vec!["s2"]);
    }
}
