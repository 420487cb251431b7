//! Parsing of model responses back into rationales, labels, pairs and triplets.

use thiserror::Error;

use crate::domain::{LabelSet, RelationLabel, Triplet};
use crate::llm::prompt::{END, LGI_STEP2_LEAD};

const REASONING: &str = "Reasoning Explanations:";
const PREDICTION: &str = "Prediction:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty response")]
    Empty,
    #[error("response has no {0:?} section")]
    MissingSection(&'static str),
    #[error("prediction line {line:?} names no known label")]
    UnknownLabel {
        rationale: String,
        line: String,
        quoted: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub rationale: String,
    pub label: RelationLabel,
}

fn strip_end_marker(s: &str) -> &str {
    match s.find(END) {
        Some(i) => &s[..i],
        None => s,
    }
}

/// Straight double quotes only; curly quotes are folded first.
fn fold_quotes(s: &str) -> String {
    s.replace(['\u{201c}', '\u{201d}'], "\"")
}

/// Last double-quoted substring of `line`, if any.
pub fn last_quoted(line: &str) -> Option<String> {
    let folded = fold_quotes(line);
    let pieces: Vec<&str> = folded.split('"').collect();
    let closed = if pieces.len() % 2 == 1 {
        pieces.len()
    } else {
        pieces.len() - 1
    };
    (1..closed).step_by(2).next_back().map(|i| pieces[i].to_string())
}

/// Splits a sentence-level response into its rationale and predicted label.
pub fn parse_re_response(raw: &str, labels: &LabelSet) -> Result<ParsedResponse, ParseError> {
    if raw.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let body = strip_end_marker(raw);
    let start = body
        .find(REASONING)
        .ok_or(ParseError::MissingSection("Reasoning Explanations"))?
        + REASONING.len();
    let rest = &body[start..];
    let pred = rest.find(PREDICTION).ok_or(ParseError::MissingSection("Prediction"))?;
    let rationale = rest[..pred].trim().to_string();
    if rationale.is_empty() {
        return Err(ParseError::MissingSection("Reasoning Explanations"));
    }
    let line = rest[pred + PREDICTION.len()..]
        .lines()
        .next()
        .unwrap_or("")
        .trim()
        .to_string();
    let quoted = last_quoted(&line);
    match quoted.as_deref().and_then(|q| labels.resolve(q)) {
        Some(label) => Ok(ParsedResponse {
            rationale,
            label: label.clone(),
        }),
        None => Err(ParseError::UnknownLabel {
            rationale,
            line,
            quoted,
        }),
    }
}

/// Reads the label derived in the second label-guided step: the last quoted
/// string of the first non-empty line, falling back to the longest label
/// name mentioned in it.
pub fn parse_derived_label(raw: &str, labels: &LabelSet) -> Option<RelationLabel> {
    let body = strip_end_marker(raw);
    let body = body.trim_start();
    let body = body.strip_prefix(LGI_STEP2_LEAD).unwrap_or(body);
    let line = body.lines().find(|l| !l.trim().is_empty())?;
    last_quoted(line)
        .and_then(|q| labels.resolve(&q).cloned())
        .or_else(|| labels.longest_mentioned(line).cloned())
}

fn between<'a>(s: &'a str, open: &str, close: &str) -> Option<(&'a str, &'a str)> {
    let start = s.find(open)? + open.len();
    let len = s[start..].find(close)?;
    Some((&s[start..start + len], &s[start + len + close.len()..]))
}

/// Entity pairs tagged `(Pair)(head)..(/head)(tail)..(/tail)(/Pair)`, in
/// order, duplicates dropped. Malformed entries are skipped.
pub fn parse_pairs(raw: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut rest = raw;
    while let Some((inner, after)) = between(rest, "(Pair)", "(/Pair)") {
        rest = after;
        let head = between(inner, "(head)", "(/head)").map(|(h, _)| h.trim());
        let tail = between(inner, "(tail)", "(/tail)").map(|(t, _)| t.trim());
        if let (Some(h), Some(t)) = (head, tail) {
            if !h.is_empty() && !t.is_empty() {
                let pair = (h.to_string(), t.to_string());
                if !out.contains(&pair) {
                    out.push(pair);
                }
            }
        }
    }
    out
}

/// Complete triplets with relation and explanation. Entries with a missing
/// tag, an empty explanation, or a relation outside `labels` are dropped.
pub fn parse_triplets(raw: &str, labels: &LabelSet) -> Vec<Triplet> {
    let mut out = Vec::new();
    let mut rest = raw;
    while let Some((inner, after)) = between(rest, "(Triplet)", "(/Triplet)") {
        rest = after;
        let field =
            |tag: &str| between(inner, &format!("({tag})"), &format!("(/{tag})")).map(|(v, _)| v.trim().to_string());
        let (Some(head), Some(rel), Some(tail), Some(explanation)) =
            (field("head"), field("relation"), field("tail"), field("explanation"))
        else {
            continue;
        };
        if head.is_empty() || tail.is_empty() || explanation.is_empty() {
            continue;
        }
        if let Some(relation) = labels.resolve(&rel) {
            out.push(Triplet {
                head,
                relation: relation.clone(),
                tail,
                explanation,
            });
        }
    }
    out
}
