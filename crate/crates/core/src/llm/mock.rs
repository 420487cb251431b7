//! Deterministic stand-in for an LLM with a configurable relation bias.
//!
//! The mock reads the inference instance out of the prompt, looks up its gold
//! label in a table supplied at construction (real backends never see gold),
//! and answers in the same surface format a real model is asked for. With
//! probability `p_eff` it predicts the configured confused label instead of
//! gold, where
//!
//! ```text
//! p_eff = p * (1 - steering_strength * [some demonstration is labeled gold])
//! ```
//!
//! All randomness comes from a stable hash of the seed, the sample id and the
//! multiset of demonstration labels, so a response is a pure function of
//! `(prompt, seed)`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::parse::last_quoted;
use super::prompt::{
    open_triplet_tag, pair_tag, prediction_line, PromptSpec, DOC_PAIR_INSTRUCTION, DOC_TRIPLET_INSTRUCTION, END,
    LGI_STEP1_INSTRUCTION, LGI_STEP2_INSTRUCTION,
};
use super::{Completion, LlmBackend, LlmError};
use crate::domain::{collapse_whitespace, instance_key, Document, LabelSet, LabeledSample, RelationLabel, Triplet};
use crate::hashing::StableHasher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub target: String,
    pub probability: f64,
}

/// Per-gold-label confusion table plus how strongly a gold-labeled
/// demonstration suppresses the confusion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasModel {
    #[serde(default)]
    pub confusion: BTreeMap<String, Confusion>,
    #[serde(default)]
    pub steering_strength: f64,
}

impl BiasModel {
    pub fn new(steering_strength: f64) -> Self {
        Self {
            confusion: BTreeMap::new(),
            steering_strength,
        }
    }

    pub fn with_confusion(mut self, gold: &str, target: &str, probability: f64) -> Self {
        self.confusion.insert(
            gold.to_string(),
            Confusion {
                target: target.to_string(),
                probability,
            },
        );
        self
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<(), LlmError> {
        if !(0.0..=1.0).contains(&self.steering_strength) {
            return Err(LlmError::Config(format!(
                "steering strength {} outside [0, 1]",
                self.steering_strength
            )));
        }
        for (gold, c) in &self.confusion {
            if !(0.0..=1.0).contains(&c.probability) {
                return Err(LlmError::Config(format!(
                    "confusion probability {} for {gold} outside [0, 1]",
                    c.probability
                )));
            }
            if *gold == c.target {
                return Err(LlmError::Config(format!("{gold} is confused with itself")));
            }
            for name in [gold, &c.target] {
                if labels.get(name).is_none() {
                    return Err(LlmError::Config(format!("unknown label {name:?} in bias model")));
                }
            }
        }
        Ok(())
    }

    /// Confused label and its effective probability for a gold label under
    /// the given demonstration labels.
    pub fn effective_confusion<S: AsRef<str>>(&self, gold: &str, demo_labels: &[S]) -> Option<(&str, f64)> {
        let c = self.confusion.get(gold)?;
        let steered = demo_labels.iter().any(|l| l.as_ref() == gold);
        let damping = if steered { self.steering_strength } else { 0.0 };
        Some((c.target.as_str(), c.probability * (1.0 - damping)))
    }
}

/// Role names a label's rationale assigns to head and tail.
pub fn roles(label: &str) -> (String, String) {
    match label.split_once('-') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => (a.to_string(), b.to_string()),
        _ => (label.to_string(), label.to_string()),
    }
}

/// Label whose roles match the two roles named in a rationale.
pub fn label_from_roles<'a>(rationale: &str, labels: &'a LabelSet) -> Option<&'a RelationLabel> {
    const MARK: &str = "serves as the \"";
    let mut found = Vec::new();
    let mut rest = rationale;
    while let Some(i) = rest.find(MARK) {
        let after = &rest[i + MARK.len()..];
        let end = after.find('"')?;
        found.push(after[..end].to_string());
        rest = &after[end..];
    }
    if found.len() < 2 {
        return None;
    }
    let wanted = (found[0].clone(), found[1].clone());
    labels.iter().find(|l| roles(l.name()) == wanted)
}

/// Span of `sentence` covering both entities, or the whole sentence.
fn key_phrase(sentence: &str, head: &str, tail: &str) -> String {
    let sentence = collapse_whitespace(sentence);
    let (head, tail) = (collapse_whitespace(head), collapse_whitespace(tail));
    match (sentence.find(&head), sentence.find(&tail)) {
        (Some(h), Some(t)) => {
            let start = h.min(t);
            let end = (h + head.len()).max(t + tail.len());
            sentence[start..end].to_string()
        }
        _ => sentence,
    }
}

const CLAUSES: [&str; 4] = [
    "the wording ties the two entities together",
    "the context makes the link between them explicit",
    "this phrasing describes how the two entities relate",
    "the sentence connects one entity to the other",
];

fn rationale_text(phrase: &str, head: &str, tail: &str, label: &str, variant: u64) -> String {
    let (r1, r2) = roles(label);
    let clause = CLAUSES[(variant % CLAUSES.len() as u64) as usize];
    format!(
        "In the given sentence, the key phrase \"{phrase}\" implies that {clause}. Therefore, the head entity \"{head}\" serves as the \"{r1}\" while the tail entity \"{tail}\" serves as the \"{r2}\"."
    )
}

fn sorted_labels<S: AsRef<str>>(demo_labels: &[S]) -> Vec<&str> {
    let mut v: Vec<&str> = demo_labels.iter().map(|s| s.as_ref()).collect();
    v.sort_unstable();
    v
}

fn draw_hasher<S: AsRef<str>>(seed: u64, sample_id: &str, demo_labels: &[S]) -> StableHasher {
    let mut h = StableHasher::new(seed);
    h.write_str(sample_id);
    for l in sorted_labels(demo_labels) {
        h.write_str(l);
    }
    h
}

/// Picks the label the mock predicts for one instance.
fn mock_label<'a, S: AsRef<str>>(
    bias: &'a BiasModel,
    gold: &'a str,
    sample_id: &str,
    demo_labels: &[S],
    seed: u64,
) -> &'a str {
    match bias.effective_confusion(gold, demo_labels) {
        Some((target, p)) if draw_hasher(seed, sample_id, demo_labels).unit() < p => target,
        _ => gold,
    }
}

fn variant<S: AsRef<str>>(seed: u64, sample_id: &str, demo_labels: &[S]) -> u64 {
    draw_hasher(seed, sample_id, demo_labels).write_str("variant").finish()
}

#[allow(clippy::too_many_arguments)]
fn re_response<S: AsRef<str>>(
    bias: &BiasModel,
    sample_id: &str,
    sentence: &str,
    head: &str,
    tail: &str,
    gold: &str,
    demo_labels: &[S],
    seed: u64,
) -> String {
    let label = mock_label(bias, gold, sample_id, demo_labels, seed);
    let phrase = key_phrase(sentence, head, tail);
    let rationale = rationale_text(&phrase, head, tail, label, variant(seed, sample_id, demo_labels));
    format!(
        "Reasoning Explanations: {rationale}\n{}\n{END}\n",
        prediction_line(head, tail, label)
    )
}

/// Mock response for a rendered relation-extraction prompt, reading the gold
/// label directly from the spec.
pub fn mock_generate(bias: &BiasModel, spec: &PromptSpec<'_>, seed: u64) -> String {
    let s = spec.inference_sample;
    let demo_labels: Vec<&str> = spec.demonstrations.iter().map(|d| d.label.name()).collect();
    re_response(
        bias,
        &s.id,
        &s.sentence,
        &s.head,
        &s.tail,
        s.gold.name(),
        &demo_labels,
        seed,
    )
}

/// Backend that answers every prompt kind the pipeline issues.
#[derive(Debug, Clone)]
pub struct MockBackend {
    bias: BiasModel,
    labels: LabelSet,
    samples: HashMap<String, (String, String)>,
    documents: HashMap<String, (String, Vec<Triplet>)>,
}

impl MockBackend {
    pub fn new(bias: BiasModel, labels: LabelSet) -> Result<Self, LlmError> {
        bias.validate(&labels)?;
        Ok(Self {
            bias,
            labels,
            samples: HashMap::new(),
            documents: HashMap::new(),
        })
    }

    /// Registers gold labels the mock may consult.
    pub fn with_samples<'a>(mut self, samples: impl IntoIterator<Item = &'a LabeledSample>) -> Self {
        for s in samples {
            self.samples
                .insert(s.instance_key(), (s.id.clone(), s.gold.name().to_string()));
        }
        self
    }

    pub fn with_documents<'a>(mut self, docs: impl IntoIterator<Item = &'a Document>) -> Self {
        for d in docs {
            self.documents
                .insert(collapse_whitespace(&d.text), (d.id.clone(), d.triplets.clone()));
        }
        self
    }

    pub fn bias(&self) -> &BiasModel {
        &self.bias
    }

    fn answer(&self, prompt: &str, seed: u64) -> Result<String, LlmError> {
        if prompt.contains(LGI_STEP1_INSTRUCTION) {
            self.answer_lgi_step1(prompt, seed)
        } else if prompt.contains(LGI_STEP2_INSTRUCTION) {
            self.answer_lgi_step2(prompt)
        } else if prompt.contains(DOC_PAIR_INSTRUCTION) {
            self.answer_doc_pairs(prompt)
        } else if prompt.contains(DOC_TRIPLET_INSTRUCTION) {
            self.answer_doc_triplets(prompt, seed)
        } else if prompt.contains("\nInference:\n") {
            self.answer_re(prompt, seed)
        } else {
            Err(LlmError::Mock("unrecognized prompt".into()))
        }
    }

    fn answer_re(&self, prompt: &str, seed: u64) -> Result<String, LlmError> {
        let (demos, inference) = split_inference(prompt)?;
        let (sentence, head, tail) = instance_fields(inference)?;
        let (id, gold) = self
            .samples
            .get(&instance_key(&sentence, &head, &tail))
            .ok_or_else(|| LlmError::Mock(format!("no gold label for instance {sentence:?}")))?;
        let demo_labels: Vec<String> = demos
            .lines()
            .filter(|l| l.starts_with("Prediction:"))
            .filter_map(last_quoted)
            .filter_map(|q| self.labels.resolve(&q).map(|l| l.name().to_string()))
            .collect();
        Ok(re_response(
            &self.bias,
            id,
            &sentence,
            &head,
            &tail,
            gold,
            &demo_labels,
            seed,
        ))
    }

    fn answer_lgi_step1(&self, prompt: &str, seed: u64) -> Result<String, LlmError> {
        let (_, inference) = split_inference(prompt)?;
        let (sentence, head, tail) = instance_fields(inference)?;
        let revealed = inference
            .lines()
            .find(|l| l.starts_with("The relation type between"))
            .and_then(last_quoted)
            .ok_or_else(|| LlmError::Mock("no revealed label".into()))?;
        let id = instance_key(&sentence, &head, &tail);
        let phrase = key_phrase(&sentence, &head, &tail);
        let v = StableHasher::new(seed).write_str(&id).finish();
        let rationale = rationale_text(&phrase, &head, &tail, &revealed, v);
        Ok(format!(
            "Reasoning Explanations: {rationale}\n{}\n{END}\n",
            prediction_line(&head, &tail, &revealed)
        ))
    }

    fn answer_lgi_step2(&self, prompt: &str) -> Result<String, LlmError> {
        let (_, inference) = split_inference(prompt)?;
        let (_, head, tail) = instance_fields(inference)?;
        let rationale =
            field(inference, "Reasoning Explanations").ok_or_else(|| LlmError::Mock("no rationale to judge".into()))?;
        Ok(match label_from_roles(&rationale, &self.labels) {
            Some(label) => format!(
                " the relation between the head entity \"{head}\" and the tail entity \"{tail}\" is \"{}\"\n{END}\n",
                label.name()
            ),
            None => format!(" the relation cannot be determined.\n{END}\n"),
        })
    }

    fn lookup_document(&self, test: &str) -> Result<&(String, Vec<Triplet>), LlmError> {
        let text = field(test, "Given Document").ok_or_else(|| LlmError::Mock("no test document".into()))?;
        self.documents
            .get(&collapse_whitespace(&text))
            .ok_or_else(|| LlmError::Mock("unknown document".into()))
    }

    fn answer_doc_pairs(&self, prompt: &str) -> Result<String, LlmError> {
        let test = test_region(prompt)?;
        let (_, triplets) = self.lookup_document(test)?;
        let entities = test
            .lines()
            .find(|l| l.starts_with("Candidate Entities:"))
            .unwrap_or("");
        let mut out = String::new();
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for t in triplets {
            let pair = (t.head.as_str(), t.tail.as_str());
            if seen.contains(&pair) || !entities.contains(pair.0) || !entities.contains(pair.1) {
                continue;
            }
            seen.push(pair);
            out.push_str(&format!("{}. {}\n", seen.len(), pair_tag(pair.0, pair.1)));
        }
        out.push_str("(/Instance)\n");
        Ok(out)
    }

    fn answer_doc_triplets(&self, prompt: &str, seed: u64) -> Result<String, LlmError> {
        let test = test_region(prompt)?;
        let demos = &prompt[..prompt.find("(Test)").unwrap_or(0)];
        let (doc_id, triplets) = self.lookup_document(test)?;
        let text = field(test, "Given Document").unwrap_or_default();
        let mut demo_labels: Vec<String> = Vec::new();
        let mut rest = demos;
        while let Some(i) = rest.find("(relation)") {
            let after = &rest[i + "(relation)".len()..];
            let Some(end) = after.find("(/relation)") else { break };
            let rel = after[..end].trim().to_string();
            if !demo_labels.contains(&rel) {
                demo_labels.push(rel);
            }
            rest = &after[end..];
        }
        let mut out = String::new();
        let mut n = 0;
        for (head, tail) in open_pairs(test) {
            let Some(gold) = triplets.iter().find(|t| t.head == head && t.tail == tail) else {
                continue;
            };
            let pair_id = format!("{doc_id}\u{1f}{head}\u{1f}{tail}");
            let label = mock_label(&self.bias, gold.relation.name(), &pair_id, &demo_labels, seed);
            let sentence = text
                .split(['.', '!', '?'])
                .find(|s| s.contains(&head) && s.contains(&tail))
                .unwrap_or(&text);
            let phrase = key_phrase(sentence, &head, &tail);
            let explanation = rationale_text(&phrase, &head, &tail, label, variant(seed, &pair_id, &demo_labels));
            n += 1;
            out.push_str(&format!(
                "{n}. (Triplet)(head){head}(/head)(relation){label}(/relation)(tail){tail}(/tail)(explanation){explanation}(/explanation)(/Triplet)\n"
            ));
        }
        out.push_str("(/Instance)\n");
        Ok(out)
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, prompt: &str, seed: u64) -> Result<Completion, LlmError> {
        self.answer(prompt, seed).map(Completion::text)
    }
}

fn split_inference(prompt: &str) -> Result<(&str, &str), LlmError> {
    let i = prompt
        .rfind("\nInference:\n")
        .ok_or_else(|| LlmError::Mock("prompt has no inference block".into()))?;
    Ok((&prompt[..i], &prompt[i..]))
}

fn test_region(prompt: &str) -> Result<&str, LlmError> {
    let i = prompt
        .rfind("(Test)")
        .ok_or_else(|| LlmError::Mock("prompt has no test block".into()))?;
    Ok(&prompt[i..])
}

fn unquote(v: &str) -> String {
    let v = v.trim();
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
        .to_string()
}

/// Value of the first `name: value` line in `block`, outer quotes removed.
fn field(block: &str, name: &str) -> Option<String> {
    let prefix = format!("{name}: ");
    block
        .lines()
        .find_map(|l| {
            l.strip_prefix(&prefix)
                .or_else(|| (l == prefix.trim_end()).then_some(""))
        })
        .map(unquote)
}

fn instance_fields(block: &str) -> Result<(String, String, String), LlmError> {
    let get = |name| field(block, name).ok_or_else(|| LlmError::Mock(format!("missing {name}")));
    Ok((get("Given Sentence")?, get("Head Entity")?, get("Tail Entity")?))
}

fn open_pairs(test: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for line in test.lines() {
        let Some(start) = line.find("(Triplet)") else { continue };
        let tag = &line[start..];
        let h = tag.find("(head)").zip(tag.find("(/head)"));
        let t = tag.find("(tail)").zip(tag.find("(/tail)"));
        if let (Some((hs, he)), Some((ts, te))) = (h, t) {
            let head = tag[hs + 6..he].to_string();
            let tail = tag[ts + 6..te].to_string();
            if tag == open_triplet_tag(&head, &tail) {
                out.push((head, tail));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Demonstration;
    use crate::llm::parse::{parse_derived_label, parse_re_response};
    use crate::llm::prompt::{render_lgi_step1, render_lgi_step2, render_re_prompt, WorkedExample};

    fn ls() -> LabelSet {
        LabelSet::semeval()
    }

    fn sample(id: &str, label: &str) -> LabeledSample {
        LabeledSample::new(
            id,
            format!("The crate {id} was moved into the warehouse yesterday ."),
            format!("crate {id}"),
            "warehouse",
            ls().get(label).unwrap().clone(),
        )
        .unwrap()
    }

    fn demo(id: &str, label: &str) -> Demonstration {
        Demonstration::new(sample(id, label), format!("because {id}"))
    }

    #[test]
    fn identical_prompt_and_seed_give_identical_responses() {
        let target = sample("t", "Entity-Destination");
        let mock = MockBackend::new(
            BiasModel::new(0.5).with_confusion("Entity-Destination", "Content-Container", 0.5),
            ls(),
        )
        .unwrap()
        .with_samples([&target]);
        let labels = ls();
        let demos = [demo("a", "Other")];
        let prompt = render_re_prompt(&PromptSpec::standard(&demos, &target, &labels));
        for seed in 0..20 {
            assert_eq!(
                mock.complete(&prompt, seed).unwrap(),
                mock.complete(&prompt, seed).unwrap()
            );
        }
    }

    #[test]
    fn full_confusion_without_gold_demonstration() {
        let target = sample("t", "Entity-Destination");
        let bias = BiasModel::new(0.8).with_confusion("Entity-Destination", "Content-Container", 1.0);
        let mock = MockBackend::new(bias, ls()).unwrap().with_samples([&target]);
        let labels = ls();
        let demos = [demo("a", "Other"), demo("b", "Cause-Effect")];
        let prompt = render_re_prompt(&PromptSpec::standard(&demos, &target, &labels));
        for seed in 0..50 {
            let raw = mock.complete(&prompt, seed).unwrap().text;
            let parsed = parse_re_response(&raw, &labels).unwrap();
            assert_eq!(parsed.label.name(), "Content-Container");
            assert!(parsed.rationale.contains("serves as the \"Content\""));
        }
    }

    #[test]
    fn full_steering_always_predicts_gold() {
        let target = sample("t", "Entity-Destination");
        let bias = BiasModel::new(1.0).with_confusion("Entity-Destination", "Content-Container", 1.0);
        let labels = ls();
        let demos = [demo("a", "Entity-Destination")];
        let spec = PromptSpec::standard(&demos, &target, &labels);
        for seed in 0..200 {
            let parsed = parse_re_response(&mock_generate(&bias, &spec, seed), &labels).unwrap();
            assert_eq!(parsed.label.name(), "Entity-Destination");
        }
    }

    #[test]
    fn monte_carlo_rate_matches_effective_probability() {
        let target = sample("t", "Entity-Destination");
        let bias = BiasModel::new(0.5).with_confusion("Entity-Destination", "Content-Container", 0.4);
        let labels = ls();
        let demos = [demo("a", "Entity-Destination"), demo("b", "Other")];
        let spec = PromptSpec::standard(&demos, &target, &labels);
        let confused = (0..10_000u64)
            .filter(|seed| {
                parse_re_response(&mock_generate(&bias, &spec, *seed), &labels)
                    .unwrap()
                    .label
                    .name()
                    == "Content-Container"
            })
            .count();
        let rate = confused as f64 / 10_000.0;
        assert!((rate - 0.2).abs() <= 0.02, "{rate}");
    }

    #[test]
    fn backend_and_spec_paths_agree() {
        let target = sample("t", "Entity-Destination");
        let bias = BiasModel::new(0.3).with_confusion("Entity-Destination", "Content-Container", 0.6);
        let mock = MockBackend::new(bias.clone(), ls()).unwrap().with_samples([&target]);
        let labels = ls();
        let demos = [demo("a", "Entity-Destination"), demo("b", "Other"), demo("c", "Other")];
        let spec = PromptSpec::standard(&demos, &target, &labels);
        let prompt = render_re_prompt(&spec);
        for seed in 0..100 {
            assert_eq!(
                mock.complete(&prompt, seed).unwrap().text,
                mock_generate(&bias, &spec, seed)
            );
        }
    }

    #[test]
    fn unknown_instance_is_an_error() {
        let target = sample("t", "Other");
        let mock = MockBackend::new(BiasModel::default(), ls()).unwrap();
        let labels = ls();
        let prompt = render_re_prompt(&PromptSpec::standard(&[], &target, &labels));
        assert!(matches!(mock.complete(&prompt, 0), Err(LlmError::Mock(_))));
    }

    #[test]
    fn lgi_round_trip_recovers_revealed_label() {
        let labels = ls();
        let mock = MockBackend::new(BiasModel::default(), labels.clone()).unwrap();
        let s = LabeledSample::new(
            "f",
            "The fueltruck was contained in a large box to ensure that any spilled diesel would be contained .",
            "fueltruck",
            "box",
            labels.get("Content-Container").unwrap().clone(),
        )
        .unwrap();
        let ex = WorkedExample::semeval();
        let step1 = mock.complete(&render_lgi_step1(&ex, &s), 3).unwrap().text;
        let parsed = parse_re_response(&step1, &labels).unwrap();
        assert_eq!(parsed.label.name(), "Content-Container");
        let step2 = mock
            .complete(&render_lgi_step2(&ex, &s, &parsed.rationale, &labels), 3)
            .unwrap()
            .text;
        assert_eq!(
            parse_derived_label(&step2, &labels).unwrap().name(),
            "Content-Container"
        );
    }

    #[test]
    fn bias_model_validation() {
        let labels = ls();
        assert!(BiasModel::new(1.5).validate(&labels).is_err());
        assert!(BiasModel::new(0.5)
            .with_confusion("Other", "Other", 0.1)
            .validate(&labels)
            .is_err());
        assert!(BiasModel::new(0.5)
            .with_confusion("Other", "Nope", 0.1)
            .validate(&labels)
            .is_err());
        assert!(BiasModel::new(0.5)
            .with_confusion("Other", "Cause-Effect", 1.1)
            .validate(&labels)
            .is_err());
        let json = r#"{"confusion":{"Entity-Destination":{"target":"Content-Container","probability":0.4}},"steering_strength":0.8}"#;
        let parsed: BiasModel = serde_json::from_str(json).unwrap();
        assert!(parsed.validate(&labels).is_ok());
    }

    #[test]
    fn roles_of_plain_and_compound_labels() {
        assert_eq!(roles("Content-Container"), ("Content".into(), "Container".into()));
        assert_eq!(roles("Other"), ("Other".into(), "Other".into()));
        assert_eq!(
            roles("org:founded_by"),
            ("org:founded_by".into(), "org:founded_by".into())
        );
    }
}
