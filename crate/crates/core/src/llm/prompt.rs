//! Prompt rendering for sentence-level relation extraction, the two
//! label-guided intervention steps, and the two-stage document prompts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{Demonstration, Document, LabelSet, LabeledSample, Triplet};

pub const RE_INSTRUCTION: &str = "Determine the relation between the given head entity and tail entity in the given sentence. The relation category is from the relation type set.";

pub const RE_HINT: &str = "Please learn the demonstration and follow the instruction, complete the \"Reasoning Explanations\" and \"Prediction\" parts of the new given instance. You only need to solve the only instance given. Please end with (End of Instance) when complete the text.";

pub const LGI_STEP1_INSTRUCTION: &str =
    "Given a sentence, explain why there is certain relation between the head and tail entities in the sentence.";

pub const LGI_STEP1_HINT: &str = "Please learn the demonstration and follow the instruction, complete the \"Reasoning Explanations\" and \"Prediction\" parts of the new given instance.\nPlease end with (End of Instance) when complete the text.";

pub const LGI_STEP2_INSTRUCTION: &str =
    "Given a sentence and corresponding explanations, try to derive the relation label prediction.";

pub const LGI_STEP2_HINT: &str =
    "Please learn the demonstration and follow the instruction, output the inference result of the new given instance.";

pub const LGI_STEP2_LEAD: &str = "Based on the above reasoning explanations,";

pub const DOC_PAIR_INSTRUCTION: &str =
    "Check the document, and find all the possible entity pairs that may hold certain relations.";

pub const DOC_PAIR_HINT: &str = "The head and tail entity must be chosen from the Candidate Entities.";

pub const DOC_TRIPLET_INSTRUCTION: &str = "Considering the document, and generate a triplet with a proper relation for each entity pair. The number of triplets must match the given entity pairs.";

pub const START: &str = "(Start of Instance)";
pub const END: &str = "(End of Instance)";

/// Everything needed to render one relation-extraction prompt.
#[derive(Debug, Clone, Copy)]
pub struct PromptSpec<'a> {
    pub instruction: &'a str,
    pub demonstrations: &'a [Demonstration],
    pub hint: Option<&'a str>,
    pub inference_sample: &'a LabeledSample,
    pub labelset: &'a LabelSet,
}

impl<'a> PromptSpec<'a> {
    /// Standard prompt with the default instruction and hint.
    pub fn standard(
        demonstrations: &'a [Demonstration],
        inference_sample: &'a LabeledSample,
        labelset: &'a LabelSet,
    ) -> Self {
        Self {
            instruction: RE_INSTRUCTION,
            demonstrations,
            hint: Some(RE_HINT),
            inference_sample,
            labelset,
        }
    }
}

pub fn prediction_line(head: &str, tail: &str, label: &str) -> String {
    format!(
        "Prediction: Given the sentence, the relation between the head entity \"{head}\" and the tail entity \"{tail}\" is \"{label}\"."
    )
}

fn write_instance_header(out: &mut String, sample: &LabeledSample, labels: &LabelSet) {
    let _ = writeln!(out, "{START}");
    let _ = writeln!(out, "Given Sentence: \"{}\"", sample.sentence);
    let _ = writeln!(out, "Relation Type Set: {}", labels.render());
    let _ = writeln!(out, "Head Entity: \"{}\"", sample.head);
    let _ = writeln!(out, "Tail Entity: \"{}\"", sample.tail);
}

/// Renders a demonstration block, `(Start of Instance)` through `(End of Instance)`.
pub fn render_demonstration(demo: &Demonstration, labels: &LabelSet) -> String {
    let mut out = String::new();
    write_instance_header(&mut out, &demo.sample, labels);
    let _ = writeln!(out, "Reasoning Explanations: {}", demo.rationale_text);
    let _ = writeln!(
        out,
        "{}",
        prediction_line(&demo.sample.head, &demo.sample.tail, demo.label.name())
    );
    let _ = writeln!(out, "{END}");
    out
}

/// Instruction, demonstrations, optional hint, then the open inference block.
pub fn render_re_prompt(spec: &PromptSpec<'_>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Instruction: {}", spec.instruction);
    let _ = writeln!(out, "Demonstrations:");
    for (i, demo) in spec.demonstrations.iter().enumerate() {
        let _ = writeln!(out, "Demo Index: {i}");
        out.push_str(&render_demonstration(demo, spec.labelset));
    }
    if let Some(hint) = spec.hint {
        let _ = writeln!(out, "{hint}");
    }
    let _ = writeln!(out, "Inference:");
    write_instance_header(&mut out, spec.inference_sample, spec.labelset);
    out
}

/// Worked example used by both label-guided intervention steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkedExample {
    pub sentence: String,
    pub head: String,
    pub tail: String,
    pub label: String,
    pub rationale: String,
}

impl WorkedExample {
    /// The SemEval instrument/agency example.
    pub fn semeval() -> Self {
        Self {
            sentence: "The therapist treats the patient with a certain kind of manual therapy .".into(),
            head: "therapy".into(),
            tail: "therapist".into(),
            label: "Instrument-Agency".into(),
            rationale: "In the given sentence, the key phrase \"therapist treats the patient with a certain kind of manual therapy\" implies that the therapy is the tool employed by the therapist to treat the patient. Therefore, the head entity \"therapy\" serves as the \"Instrument\" while the tail entity \"therapist\" serves as the \"Agency\".".into(),
        }
    }
}

fn revealed_label_line(head: &str, tail: &str, label: &str) -> String {
    format!("The relation type between \"{head}\" and \"{tail}\" is \"{label}\"")
}

/// Step one: the gold label is stated and the model is asked for a rationale.
pub fn render_lgi_step1(example: &WorkedExample, sample: &LabeledSample) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Instruction: {LGI_STEP1_INSTRUCTION}");
    let _ = writeln!(out, "Demonstrations:");
    let _ = writeln!(out, "{START}");
    let _ = writeln!(out, "Given Sentence: \"{}\"", example.sentence);
    let _ = writeln!(out, "Head Entity: \"{}\"", example.head);
    let _ = writeln!(out, "Tail Entity: \"{}\"", example.tail);
    let _ = writeln!(
        out,
        "{}",
        revealed_label_line(&example.head, &example.tail, &example.label)
    );
    let _ = writeln!(out, "Reasoning Explanations: {}", example.rationale);
    let _ = writeln!(out, "{}", prediction_line(&example.head, &example.tail, &example.label));
    let _ = writeln!(out, "{END}");
    let _ = writeln!(out);
    let _ = writeln!(out, "{LGI_STEP1_HINT}");
    let _ = writeln!(out);
    let _ = writeln!(out, "Inference:");
    let _ = writeln!(out, "{START}");
    let _ = writeln!(out, "Given Sentence: \"{}\"", sample.sentence);
    let _ = writeln!(out, "Head Entity: \"{}\"", sample.head);
    let _ = writeln!(out, "Tail Entity: \"{}\"", sample.tail);
    let _ = writeln!(
        out,
        "{}",
        revealed_label_line(&sample.head, &sample.tail, sample.gold.name())
    );
    out
}

fn derived_label_line(head: &str, tail: &str, label: &str) -> String {
    format!(
        "{LGI_STEP2_LEAD} the relation between the head entity \"{head}\" and the tail entity \"{tail}\" is \"{label}\""
    )
}

/// Step two: only the rationale is given and the model must derive the label.
pub fn render_lgi_step2(example: &WorkedExample, sample: &LabeledSample, rationale: &str, labels: &LabelSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Instruction: {LGI_STEP2_INSTRUCTION}");
    let _ = writeln!(out, "Demonstrations:");
    let _ = writeln!(out, "{START}");
    let _ = writeln!(out, "Given Sentence: \"{}\"", example.sentence);
    let _ = writeln!(out, "Relation Type Set: {}", labels.render());
    let _ = writeln!(out, "Head Entity: \"{}\"", example.head);
    let _ = writeln!(out, "Tail Entity: \"{}\"", example.tail);
    let _ = writeln!(out, "Reasoning Explanations: {}", example.rationale);
    let _ = writeln!(
        out,
        "{}",
        derived_label_line(&example.head, &example.tail, &example.label)
    );
    let _ = writeln!(out, "{END}");
    let _ = writeln!(out);
    let _ = writeln!(out, "{LGI_STEP2_HINT}");
    let _ = writeln!(out);
    let _ = writeln!(out, "Inference:");
    write_instance_header(&mut out, sample, labels);
    let _ = writeln!(out, "Reasoning Explanations: {rationale}");
    let _ = writeln!(out, "{LGI_STEP2_LEAD}");
    out
}

fn entity_list(entities: &[String]) -> String {
    format!("{{{}}}", entities.join(", "))
}

pub fn pair_tag(head: &str, tail: &str) -> String {
    format!("(Pair)(head){head}(/head)(tail){tail}(/tail)(/Pair)")
}

pub fn open_triplet_tag(head: &str, tail: &str) -> String {
    format!("(Triplet)(head){head}(/head)(tail){tail}(/tail)(/Triplet)")
}

pub fn triplet_tag(t: &Triplet) -> String {
    format!(
        "(Triplet)(head){}(/head)(relation){}(/relation)(tail){}(/tail)(explanation){}(/explanation)(/Triplet)",
        t.head,
        t.relation.name(),
        t.tail,
        t.explanation
    )
}

fn numbered(out: &mut String, items: impl Iterator<Item = String>) {
    for (i, item) in items.enumerate() {
        let _ = writeln!(out, "{}. {item}", i + 1);
    }
}

fn doc_pairs(doc: &Document) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for t in &doc.triplets {
        let pair = (t.head.clone(), t.tail.clone());
        if !pairs.contains(&pair) {
            pairs.push(pair);
        }
    }
    pairs
}

/// Stage one of document-level extraction: candidate entity pairs.
pub fn render_doc_pair_prompt(demo: Option<&Document>, doc: &Document, labels: &LabelSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(Instruction) {DOC_PAIR_INSTRUCTION} (/Instruction)");
    let _ = writeln!(out, "(Demonstrations)");
    if let Some(demo) = demo {
        let _ = writeln!(out, "(Instance)");
        let _ = writeln!(out, "Given Document: \"{}\"", demo.text);
        let _ = writeln!(out, "Candidate Relation Types: {}", labels.render());
        let _ = writeln!(out, "Candidate Entities: {}", entity_list(&demo.entities));
        let _ = writeln!(out, "Candidate Entity Pairs: ");
        numbered(&mut out, doc_pairs(demo).iter().map(|(h, t)| pair_tag(h, t)));
        let _ = writeln!(out, "(/Instance)");
    }
    let _ = writeln!(out, "(/Demonstrations)");
    let _ = writeln!(out, "(Test)");
    let _ = writeln!(out, "(Hint){DOC_PAIR_HINT}(/Hint)");
    let _ = writeln!(out, "(Instance)");
    let _ = writeln!(out, "Given Document: \"{}\"", doc.text);
    let _ = writeln!(out, "Candidate Relation Types: {}", labels.render());
    let _ = writeln!(out, "Candidate Entities: {}", entity_list(&doc.entities));
    let _ = writeln!(out, "Candidate Entity Pairs: ");
    out
}

/// Stage two: one triplet with relation and explanation per candidate pair.
pub fn render_doc_triplet_prompt(
    demo: Option<&Document>,
    doc: &Document,
    pairs: &[(String, String)],
    labels: &LabelSet,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(Instruction) {DOC_TRIPLET_INSTRUCTION}(/Instruction)");
    let _ = writeln!(out, "(Demonstrations)");
    if let Some(demo) = demo {
        let _ = writeln!(out, "(Instance)");
        let _ = writeln!(out, "Given Document: \"{}\"", demo.text);
        let _ = writeln!(out, "Candidate Relation Types: {}", labels.render());
        let _ = writeln!(out, "Candidate Entity Pairs: ");
        numbered(&mut out, doc_pairs(demo).iter().map(|(h, t)| open_triplet_tag(h, t)));
        let _ = writeln!(out, "Extracted Triplets: ");
        numbered(&mut out, demo.triplets.iter().map(triplet_tag));
        let _ = writeln!(out, "(/Instance)");
    }
    let _ = writeln!(out, "(/Demonstrations)");
    let _ = writeln!(out, "(Test)");
    let _ = writeln!(
        out,
        "(Hint) The relation must be chosen from the given Candidate Relation Types. Please generate {} triplets that correspond exactly to the given entity pairs. (/Hint)",
        pairs.len()
    );
    let _ = writeln!(out, "(Instance)");
    let _ = writeln!(out, "Given Document: \"{}\"", doc.text);
    let _ = writeln!(out, "Candidate Relation Types: {}", labels.render());
    let _ = writeln!(out, "Candidate Entity Pairs: ");
    numbered(&mut out, pairs.iter().map(|(h, t)| open_triplet_tag(h, t)));
    let _ = writeln!(out, "Extracted Triplets: ");
    out
}
