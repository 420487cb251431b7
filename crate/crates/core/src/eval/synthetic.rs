//! A SemEval-shaped synthetic corpus with label-specific vocabulary, and the
//! bias model used to exercise the correction loop on it.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Document, LabelSet, LabeledSample, Triplet};
use crate::hashing::derive_seed;
use crate::llm::BiasModel;

struct Vocabulary {
    label: &'static str,
    cues: &'static [&'static str],
    heads: &'static [&'static str],
    tails: &'static [&'static str],
}

const VOCABULARY: [Vocabulary; 10] = [
    Vocabulary {
        label: "Other",
        cues: &[
            "was seen near",
            "stood beside",
            "was noticed next to",
            "was photographed with",
        ],
        heads: &["lamp", "statue", "bench", "fountain", "poster", "kiosk"],
        tails: &["gate", "tower", "museum", "stadium", "library", "bakery"],
    },
    Vocabulary {
        label: "Component-Whole",
        cues: &["is a part of", "is a component of", "was fitted onto", "is attached to"],
        heads: &["wheel", "handle", "blade", "lens", "screen", "hinge"],
        tails: &["bicycle", "door", "knife", "camera", "laptop", "cabinet"],
    },
    Vocabulary {
        label: "Instrument-Agency",
        cues: &["was used by", "was wielded by", "was operated by", "was handled by"],
        heads: &["hammer", "scalpel", "brush", "telescope", "sword", "microscope"],
        tails: &["carpenter", "surgeon", "painter", "astronomer", "knight", "biologist"],
    },
    Vocabulary {
        label: "Member-Collection",
        cues: &["is a member of", "belongs to", "plays in", "travels with"],
        heads: &["player", "bird", "oak", "soldier", "singer", "wolf"],
        tails: &["team", "flock", "forest", "army", "choir", "pack"],
    },
    Vocabulary {
        label: "Cause-Effect",
        cues: &["caused", "led to", "triggered", "resulted in"],
        heads: &["smoke", "virus", "storm", "drought", "spark", "quake"],
        tails: &["alarm", "fever", "flood", "famine", "fire", "panic"],
    },
    Vocabulary {
        label: "Entity-Destination",
        cues: &[
            "was moved into",
            "was dropped into",
            "was shipped to",
            "was poured into",
        ],
        heads: &["letter", "coin", "patient", "cargo", "water", "parcel"],
        tails: &["mailbox", "jar", "hospital", "harbor", "tank", "warehouse"],
    },
    Vocabulary {
        label: "Content-Container",
        cues: &["was kept inside", "was stored in", "was sealed inside", "sat in"],
        heads: &["apple", "wine", "cash", "milk", "powder", "sand"],
        tails: &["basket", "bottle", "safe", "carton", "crate", "urn"],
    },
    Vocabulary {
        label: "Message-Topic",
        cues: &["is about", "describes", "discusses", "reports on"],
        heads: &["lecture", "article", "report", "book", "film", "memo"],
        tails: &["history", "climate", "budget", "war", "poverty", "merger"],
    },
    Vocabulary {
        label: "Product-Producer",
        cues: &["was made by", "was built by", "was written by", "was brewed by"],
        heads: &["cake", "bridge", "novel", "beer", "software", "sculpture"],
        tails: &["baker", "engineer", "author", "brewery", "startup", "sculptor"],
    },
    Vocabulary {
        label: "Entity-Origin",
        cues: &["was derived from", "came from", "emerged from", "was extracted from"],
        heads: &["data", "oil", "honey", "juice", "signal", "legend"],
        tails: &["study", "well", "hive", "orchard", "satellite", "village"],
    },
];

const SUFFIXES: [&str; 8] = [
    "yesterday",
    "last week",
    "in the morning",
    "after lunch",
    "this spring",
    "during the night",
    "on Monday",
    "two years ago",
];

const MAX_ATTEMPTS: usize = 10_000;

/// Labeled sentences for training and testing; the splits never share an instance.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub labels: LabelSet,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// The confusions the synthetic benchmark injects: three label pairs at
/// probability 0.4, damped by 0.8 when a gold-labeled demonstration is shown.
pub fn default_bias() -> BiasModel {
    BiasModel::new(0.8)
        .with_confusion("Entity-Destination", "Content-Container", 0.4)
        .with_confusion("Entity-Origin", "Product-Producer", 0.4)
        .with_confusion("Member-Collection", "Component-Whole", 0.4)
}

fn sentence(v: &Vocabulary, rng: &mut ChaCha8Rng) -> (String, &'static str, &'static str) {
    let head = v.heads[rng.gen_range(0..v.heads.len())];
    let tail = v.tails[rng.gen_range(0..v.tails.len())];
    let cue = v.cues[rng.gen_range(0..v.cues.len())];
    let suffix = SUFFIXES[rng.gen_range(0..SUFFIXES.len())];
    (format!("The {head} {cue} the {tail} {suffix}."), head, tail)
}

fn occurs_once(text: &str, word: &str) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| *w == word)
        .count()
        == 1
        && text.matches(word).count() == 1
}

/// `train_per_label` and `test_per_label` sentences for each of the ten
/// SemEval labels. Ids are `train-N` and `test-N` in generation order.
///
/// # Panics
/// If the vocabulary cannot supply that many distinct sentences for a label.
pub fn sentence_corpus(train_per_label: usize, test_per_label: usize, seed: u64) -> SyntheticCorpus {
    let labels = LabelSet::semeval();
    let mut seen: HashSet<String> = HashSet::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in &VOCABULARY {
        let gold = labels.get(v.label).expect("vocabulary uses SemEval labels").clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["synthetic", v.label]));
        let mut made = 0;
        let mut attempts = 0;
        while made < train_per_label + test_per_label {
            attempts += 1;
            assert!(attempts < MAX_ATTEMPTS, "vocabulary for {} exhausted", v.label);
            let (text, head, tail) = sentence(v, &mut rng);
            if !occurs_once(&text, head) || !occurs_once(&text, tail) || !seen.insert(text.clone()) {
                continue;
            }
            let (split, prefix) = if made < train_per_label {
                (&mut train, "train")
            } else {
                (&mut test, "test")
            };
            let id = format!("{prefix}-{}", split.len());
            split.push(LabeledSample::new(id, text, head, tail, gold.clone()).expect("entities occur in the sentence"));
            made += 1;
        }
    }
    SyntheticCorpus { labels, train, test }
}

/// Documents of two to four sentences, each sentence contributing one
/// non-`Other` triplet. Entities never repeat within a document.
pub fn document_corpus(count: usize, seed: u64) -> Vec<Document> {
    let labels = LabelSet::semeval();
    let relational: Vec<&Vocabulary> = VOCABULARY.iter().filter(|v| v.label != "Other").collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["synthetic-docs"]));
    let mut docs = Vec::with_capacity(count);
    for i in 0..count {
        let n_sentences = rng.gen_range(2..=4);
        let mut text = String::new();
        let mut entities: Vec<String> = Vec::new();
        let mut triplets = Vec::new();
        let mut attempts = 0;
        while triplets.len() < n_sentences && attempts < MAX_ATTEMPTS {
            attempts += 1;
            let v = relational.choose(&mut rng).expect("non-empty");
            let (s, head, tail) = sentence(v, &mut rng);
            if entities.iter().any(|e| e == head || e == tail) {
                continue;
            }
            if !text.is_empty() {
                text.push(' ');
            }
            text.push_str(&s);
            entities.push(head.to_string());
            entities.push(tail.to_string());
            triplets.push(Triplet {
                head: head.to_string(),
                relation: labels.get(v.label).expect("SemEval label").clone(),
                tail: tail.to_string(),
                explanation: String::new(),
            });
        }
        docs.push(Document {
            id: format!("doc-{i}"),
            text,
            entities,
            triplets,
        });
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_balanced_distinct_and_deterministic() {
        let c = sentence_corpus(20, 50, 7);
        assert_eq!(c.train.len(), 200);
        assert_eq!(c.test.len(), 500);
        let keys: HashSet<String> = c.train.iter().chain(&c.test).map(|s| s.instance_key()).collect();
        assert_eq!(keys.len(), 700);
        for l in c.labels.iter() {
            assert_eq!(c.test.iter().filter(|s| s.gold == *l).count(), 50);
        }
        let again = sentence_corpus(20, 50, 7);
        assert_eq!(c.train, again.train);
        assert_ne!(c.test, sentence_corpus(20, 50, 8).test);
    }

    #[test]
    fn entities_occur_once_in_order() {
        for s in sentence_corpus(5, 5, 1).train {
            let h = s.sentence.find(&s.head).unwrap();
            let t = s.sentence.find(&s.tail).unwrap();
            assert!(h < t, "{}", s.sentence);
        }
    }

    #[test]
    fn documents_have_unique_entities() {
        for d in document_corpus(30, 3) {
            assert!((2..=4).contains(&d.triplets.len()));
            let set: HashSet<&String> = d.entities.iter().collect();
            assert_eq!(set.len(), d.entities.len());
            assert!(d.triplets.iter().all(|t| !t.relation.is_negative()));
        }
    }

    #[test]
    fn bias_model_is_valid_for_semeval() {
        default_bias().validate(&LabelSet::semeval()).unwrap();
    }
}
