//! Domain types shared by every stage of the pipeline: relation labels,
//! labeled samples, rationales and the rationale store.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building domain objects or reading/writing data files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: unknown relation label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: entity {entity:?} does not occur in sentence")]
    EntityNotFound { line: usize, entity: String },
    #[error("sample {id:?}: {message}")]
    InvalidSample { id: String, message: String },
    #[error("invalid rationale for sample {sample_id:?}: {message}")]
    InvalidRationale { sample_id: String, message: String },
    #[error("rationale refers to unknown sample {0:?}")]
    UnknownSample(String),
    #[error("conflicting definitions for sample {0:?}")]
    ConflictingSample(String),
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// A relation type. Two labels are the same relation iff their names match.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationLabel {
    name: String,
    is_negative: bool,
}

impl RelationLabel {
    pub fn new(name: impl Into<String>, is_negative: bool) -> Self {
        Self {
            name: name.into(),
            is_negative,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_negative(&self) -> bool {
        self.is_negative
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Canonical form used for tolerant label matching: lowercase, no spaces
/// around hyphens or underscores, collapsed inner whitespace.
pub fn normalize_label(raw: &str) -> String {
    let collapsed = collapse_whitespace(raw).to_lowercase();
    let mut out = String::with_capacity(collapsed.len());
    for ch in collapsed.chars() {
        if (ch == '-' || ch == '_') && out.ends_with(' ') {
            out.pop();
        }
        if ch == ' ' && (out.ends_with('-') || out.ends_with('_')) {
            continue;
        }
        out.push(ch);
    }
    out
}

/// Collapses runs of whitespace into single spaces and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The ordered set of relation types of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<RelationLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSetFile {
    labels: Vec<String>,
    #[serde(default)]
    negatives: Vec<String>,
}

pub const SEMEVAL_LABELS: [&str; 10] = [
    "Other",
    "Component-Whole",
    "Instrument-Agency",
    "Member-Collection",
    "Cause-Effect",
    "Entity-Destination",
    "Content-Container",
    "Message-Topic",
    "Product-Producer",
    "Entity-Origin",
];

impl LabelSet {
    pub fn new<S: AsRef<str>>(names: &[S], negatives: &[S]) -> Result<Self> {
        if names.is_empty() {
            return Err(DataError::InvalidLabelSet("no labels".into()));
        }
        let negatives: HashSet<&str> = negatives.iter().map(|n| n.as_ref()).collect();
        let mut seen = HashSet::new();
        let mut labels = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            if name.is_empty() {
                return Err(DataError::InvalidLabelSet("empty label name".into()));
            }
            if !seen.insert(name) {
                return Err(DataError::InvalidLabelSet(format!("duplicate label {name:?}")));
            }
            labels.push(RelationLabel::new(name, negatives.contains(name)));
        }
        for neg in &negatives {
            if !seen.contains(neg) {
                return Err(DataError::InvalidLabelSet(format!(
                    "negative label {neg:?} is not in the label set"
                )));
            }
        }
        Ok(Self { labels })
    }

    /// The ten SemEval-2010 Task 8 directionless relation types; `Other` is negative.
    pub fn semeval() -> Self {
        Self::new(&SEMEVAL_LABELS, &["Other"]).expect("static label set is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: LabelSetFile = serde_json::from_str(&text).map_err(|e| DataError::Malformed {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::new(&file.labels, &file.negatives)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = LabelSetFile {
            labels: self.labels.iter().map(|l| l.name.clone()).collect(),
            negatives: self.negatives().map(|l| l.name.clone()).collect(),
        };
        let text = serde_json::to_string_pretty(&file).expect("label set serializes");
        std::fs::write(path, text).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationLabel> {
        self.labels.iter()
    }

    pub fn negatives(&self) -> impl Iterator<Item = &RelationLabel> {
        self.labels.iter().filter(|l| l.is_negative)
    }

    /// Exact lookup by name.
    pub fn get(&self, name: &str) -> Option<&RelationLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    /// Lookup tolerant to case and to spaces around hyphens/underscores.
    pub fn resolve(&self, raw: &str) -> Option<&RelationLabel> {
        if let Some(label) = self.get(raw.trim()) {
            return Some(label);
        }
        let wanted = normalize_label(raw);
        self.labels.iter().find(|l| normalize_label(&l.name) == wanted)
    }

    /// Longest label name that occurs case-insensitively anywhere in `text`.
    pub fn longest_mentioned(&self, text: &str) -> Option<&RelationLabel> {
        let haystack = normalize_label(text);
        self.labels
            .iter()
            .filter(|l| haystack.contains(&normalize_label(&l.name)))
            .max_by_key(|l| l.name.len())
    }

    /// Label emitted when a response cannot be interpreted.
    pub fn fallback(&self) -> &RelationLabel {
        self.negatives().next().unwrap_or(&self.labels[0])
    }

    /// Comma-separated rendering used in prompts: `{A, B, C}`.
    pub fn render(&self) -> String {
        let names: Vec<&str> = self.labels.iter().map(|l| l.name.as_str()).collect();
        format!("{{{}}}", names.join(", "))
    }
}

/// One labeled relation-extraction instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub id: String,
    pub sentence: String,
    pub head: String,
    pub tail: String,
    pub gold: RelationLabel,
}

impl LabeledSample {
    /// Builds a sample, checking that both entities occur in the sentence
    /// after whitespace normalization.
    pub fn new(
        id: impl Into<String>,
        sentence: impl Into<String>,
        head: impl Into<String>,
        tail: impl Into<String>,
        gold: RelationLabel,
    ) -> Result<Self> {
        let sample = Self {
            id: id.into(),
            sentence: sentence.into(),
            head: head.into(),
            tail: tail.into(),
            gold,
        };
        if let Some(entity) = sample.missing_entity() {
            return Err(DataError::InvalidSample {
                id: sample.id.clone(),
                message: format!("entity {entity:?} does not occur in sentence"),
            });
        }
        Ok(sample)
    }

    fn missing_entity(&self) -> Option<&str> {
        let sentence = collapse_whitespace(&self.sentence);
        [&self.head, &self.tail]
            .into_iter()
            .find(|e| {
                let e = collapse_whitespace(e);
                e.is_empty() || !sentence.contains(&e)
            })
            .map(|e| e.as_str())
    }

    /// Identity of the instance as seen by a model: sentence and entity pair.
    pub fn instance_key(&self) -> String {
        instance_key(&self.sentence, &self.head, &self.tail)
    }
}

pub fn instance_key(sentence: &str, head: &str, tail: &str) -> String {
    format!(
        "{}\u{1f}{}\u{1f}{}",
        collapse_whitespace(sentence),
        collapse_whitespace(head),
        collapse_whitespace(tail)
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    sentence: String,
    head: String,
    tail: String,
    label: String,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_record<T: for<'de> Deserialize<'de>>(line_no: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| DataError::Malformed {
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads a JSONL samples file. Blank lines are skipped.
pub fn load_samples(path: &Path, labels: &LabelSet) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = parse_record(line_no, &line)?;
        let gold = labels
            .get(&rec.label)
            .ok_or_else(|| DataError::UnknownLabel {
                line: line_no,
                label: rec.label.clone(),
            })?
            .clone();
        let sample = LabeledSample {
            id: rec.id,
            sentence: rec.sentence,
            head: rec.head,
            tail: rec.tail,
            gold,
        };
        if let Some(entity) = sample.missing_entity() {
            return Err(DataError::EntityNotFound {
                line: line_no,
                entity: entity.to_string(),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn save_samples(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    write_jsonl(
        path,
        samples.iter().map(|s| SampleRecord {
            id: s.id.clone(),
            sentence: s.sentence.clone(),
            head: s.head.clone(),
            tail: s.tail.clone(),
            label: s.gold.name().to_string(),
        }),
    )
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<()> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in records {
        serde_json::to_writer(&mut w, &rec).expect("record serializes");
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RationaleKind {
    Unbiased,
    Biased,
}

/// Procedure that produced a rationale: label-guided intervention,
/// diversified intervention, or ordinary inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RationaleSource {
    Lgi,
    Di,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rationale {
    pub sample_id: String,
    pub text: String,
    pub predicted: RelationLabel,
    pub kind: RationaleKind,
    pub source: RationaleSource,
}

impl Rationale {
    fn dedup_key(&self) -> (String, String, String) {
        (
            self.sample_id.clone(),
            self.text.clone(),
            self.predicted.name().to_string(),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RationaleRecord {
    sample_id: String,
    text: String,
    predicted: String,
    kind: RationaleKind,
    source: RationaleSource,
}

/// Unbiased and biased rationales together with the labeled samples they
/// were collected from.
#[derive(Debug, Clone, Default)]
pub struct RationaleStore {
    unbiased: Vec<Rationale>,
    biased: Vec<Rationale>,
    samples: BTreeMap<String, LabeledSample>,
    keys: HashSet<(String, String, String)>,
}

impl PartialEq for RationaleStore {
    fn eq(&self, other: &Self) -> bool {
        self.unbiased == other.unbiased && self.biased == other.biased && self.samples == other.samples
    }
}

impl RationaleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unbiased(&self) -> &[Rationale] {
        &self.unbiased
    }

    pub fn biased(&self) -> &[Rationale] {
        &self.biased
    }

    pub fn samples(&self) -> &BTreeMap<String, LabeledSample> {
        &self.samples
    }

    pub fn sample(&self, id: &str) -> Option<&LabeledSample> {
        self.samples.get(id)
    }

    pub fn len(&self) -> usize {
        self.unbiased.len() + self.biased.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unbiased.is_empty() && self.biased.is_empty()
    }

    /// Registers a sample. Re-adding an identical sample is a no-op.
    pub fn add_sample(&mut self, sample: LabeledSample) -> Result<()> {
        match self.samples.get(&sample.id) {
            Some(existing) if *existing != sample => Err(DataError::ConflictingSample(sample.id.clone())),
            Some(_) => Ok(()),
            None => {
                self.samples.insert(sample.id.clone(), sample);
                Ok(())
            }
        }
    }

    /// Adds a rationale after validating it against its sample's gold label.
    /// Returns `false` when the (sample, text, predicted) triple is already present.
    pub fn push(&mut self, rationale: Rationale) -> Result<bool> {
        let sample = self
            .samples
            .get(&rationale.sample_id)
            .ok_or_else(|| DataError::UnknownSample(rationale.sample_id.clone()))?;
        let invalid = |message: &str| DataError::InvalidRationale {
            sample_id: rationale.sample_id.clone(),
            message: message.to_string(),
        };
        if rationale.text.trim().is_empty() {
            return Err(invalid("empty text"));
        }
        let matches_gold = rationale.predicted.name() == sample.gold.name();
        match rationale.kind {
            RationaleKind::Unbiased if !matches_gold => {
                return Err(invalid("unbiased rationale must predict the gold label"))
            }
            RationaleKind::Biased if matches_gold => {
                return Err(invalid("biased rationale must not predict the gold label"))
            }
            _ => {}
        }
        if !self.keys.insert(rationale.dedup_key()) {
            return Ok(false);
        }
        match rationale.kind {
            RationaleKind::Unbiased => self.unbiased.push(rationale),
            RationaleKind::Biased => self.biased.push(rationale),
        }
        Ok(true)
    }

    /// First unbiased rationale recorded for a sample.
    pub fn unbiased_for(&self, sample_id: &str) -> Option<&Rationale> {
        self.unbiased.iter().find(|r| r.sample_id == sample_id)
    }

    /// Samples that carry an unbiased rationale, as demonstrations, in sample-id order.
    pub fn demonstrations(&self) -> Vec<Demonstration> {
        self.samples
            .values()
            .filter_map(|s| {
                self.unbiased_for(&s.id)
                    .map(|r| Demonstration::new(s.clone(), r.text.clone()))
            })
            .collect()
    }

    pub fn demonstration_for(&self, sample_id: &str) -> Option<Demonstration> {
        let sample = self.samples.get(sample_id)?;
        let r = self.unbiased_for(sample_id)?;
        Some(Demonstration::new(sample.clone(), r.text.clone()))
    }

    /// Union of two stores; rationales of `a` come first, duplicates dropped.
    pub fn merge(a: &RationaleStore, b: &RationaleStore) -> Result<RationaleStore> {
        let mut out = a.clone();
        for sample in b.samples.values() {
            out.add_sample(sample.clone())?;
        }
        for r in b.unbiased.iter().chain(&b.biased) {
            out.push(r.clone())?;
        }
        Ok(out)
    }

    /// Writes the rationales as JSONL: unbiased first, then biased.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(
            path,
            self.unbiased.iter().chain(&self.biased).map(|r| RationaleRecord {
                sample_id: r.sample_id.clone(),
                text: r.text.clone(),
                predicted: r.predicted.name().to_string(),
                kind: r.kind,
                source: r.source,
            }),
        )
    }

    /// Reads a rationale JSONL file, resolving sample ids against `samples`.
    pub fn load(path: &Path, samples: &[LabeledSample], labels: &LabelSet) -> Result<Self> {
        let mut store = RationaleStore::new();
        for s in samples {
            store.add_sample(s.clone())?;
        }
        for (line_no, line) in open_lines(path)? {
            let line = line.map_err(|source| DataError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RationaleRecord = parse_record(line_no, &line)?;
            let predicted = labels
                .get(&rec.predicted)
                .ok_or_else(|| DataError::UnknownLabel {
                    line: line_no,
                    label: rec.predicted.clone(),
                })?
                .clone();
            store.push(Rationale {
                sample_id: rec.sample_id,
                text: rec.text,
                predicted,
                kind: rec.kind,
                source: rec.source,
            })?;
        }
        Ok(store)
    }
}

/// A worked example shown to the model: a labeled sample with its unbiased
/// rationale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub sample: LabeledSample,
    pub rationale_text: String,
    pub label: RelationLabel,
}

impl Demonstration {
    pub fn new(sample: LabeledSample, rationale_text: impl Into<String>) -> Self {
        let label = sample.gold.clone();
        Self {
            sample,
            rationale_text: rationale_text.into(),
            label,
        }
    }
}

/// Final output of the correction loop for one test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub rationale_text: String,
    pub label: RelationLabel,
    pub raw_response: String,
    pub iterations_used: usize,
    pub llm_calls: usize,
    /// Indicator score of every verified iterate, in order.
    pub p_b_trace: Vec<f64>,
}

/// A relation triplet extracted from a document, with its rationale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub head: String,
    pub relation: RelationLabel,
    pub tail: String,
    pub explanation: String,
}

impl Triplet {
    /// Identity used for set semantics; the explanation is not part of it.
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.head, self.relation.name(), &self.tail)
    }
}

/// A document with its candidate entities and (for labeled documents) gold triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub entities: Vec<String>,
    pub triplets: Vec<Triplet>,
}

impl Document {
    /// Distinct relation labels among the document's triplets.
    pub fn relations(&self) -> Vec<&RelationLabel> {
        let mut out: Vec<&RelationLabel> = Vec::new();
        for t in &self.triplets {
            if !out.contains(&&t.relation) {
                out.push(&t.relation);
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletRecord {
    head: String,
    relation: String,
    tail: String,
    #[serde(default)]
    explanation: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
    #[serde(default)]
    entities: Vec<String>,
    #[serde(default)]
    triplets: Vec<TripletRecord>,
}

/// Reads a JSONL file of documents:
/// `{id, text, entities: [..], triplets: [{head, relation, tail, explanation}]}`.
pub fn load_documents(path: &Path, labels: &LabelSet) -> Result<Vec<Document>> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord = parse_record(line_no, &line)?;
        let mut triplets = Vec::with_capacity(rec.triplets.len());
        for t in rec.triplets {
            let relation = labels
                .get(&t.relation)
                .ok_or_else(|| DataError::UnknownLabel {
                    line: line_no,
                    label: t.relation.clone(),
                })?
                .clone();
            triplets.push(Triplet {
                head: t.head,
                relation,
                tail: t.tail,
                explanation: t.explanation,
            });
        }
        out.push(Document {
            id: rec.id,
            text: rec.text,
            entities: rec.entities,
            triplets,
        });
    }
    Ok(out)
}

pub fn save_documents(path: &Path, docs: &[Document]) -> Result<()> {
    write_jsonl(
        path,
        docs.iter().map(|d| DocumentRecord {
            id: d.id.clone(),
            text: d.text.clone(),
            entities: d.entities.clone(),
            triplets: d
                .triplets
                .iter()
                .map(|t| TripletRecord {
                    head: t.head.clone(),
                    relation: t.relation.name().to_string(),
                    tail: t.tail.clone(),
                    explanation: t.explanation.clone(),
                })
                .collect(),
        }),
    )
}
