//! Micro-F1 with negative labels, and the misclassification matrix.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{LabelSet, RelationLabel};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl F1Counts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Counts over `(gold, predicted)` pairs. A correct non-negative prediction
/// is a true positive; a non-negative prediction that is wrong is a false
/// positive; a non-negative gold label that was missed is a false negative.
pub fn f1_counts<'a>(preds: impl IntoIterator<Item = (&'a str, &'a str)>, negatives: &HashSet<&str>) -> F1Counts {
    let mut c = F1Counts::default();
    for (gold, pred) in preds {
        let gold_pos = !negatives.contains(gold);
        let pred_pos = !negatives.contains(pred);
        if gold == pred {
            if gold_pos {
                c.tp += 1;
            }
            continue;
        }
        if pred_pos {
            c.fp += 1;
        }
        if gold_pos {
            c.fn_ += 1;
        }
    }
    c
}

pub fn micro_f1(preds: &[(RelationLabel, RelationLabel)], negatives: &[RelationLabel]) -> f64 {
    let neg: HashSet<&str> = negatives.iter().map(RelationLabel::name).collect();
    f1_counts(preds.iter().map(|(g, p)| (g.name(), p.name())), &neg).f1()
}

/// Off-diagonal counts indexed by (gold, predicted).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ErrorMatrix {
    labels: Vec<String>,
    counts: BTreeMap<(String, String), usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub gold: String,
    pub predicted: String,
    pub count: usize,
}

impl ErrorMatrix {
    pub fn get(&self, gold: &str, predicted: &str) -> usize {
        self.counts
            .get(&(gold.to_string(), predicted.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    /// Errors per gold label.
    pub fn row_sum(&self, gold: &str) -> usize {
        self.counts.iter().filter(|((g, _), _)| g == gold).map(|(_, n)| n).sum()
    }

    /// Non-zero cells, most frequent first, then in label order.
    pub fn worst(&self, n: usize) -> Vec<Confusion> {
        let pos = |l: &str| self.labels.iter().position(|x| x == l).unwrap_or(usize::MAX);
        let mut cells: Vec<Confusion> = self
            .counts
            .iter()
            .map(|((g, p), &count)| Confusion {
                gold: g.clone(),
                predicted: p.clone(),
                count,
            })
            .collect();
        cells.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| pos(&a.gold).cmp(&pos(&b.gold)))
                .then_with(|| pos(&a.predicted).cmp(&pos(&b.predicted)))
        });
        cells.truncate(n);
        cells
    }

    /// Rows are gold labels, columns predicted labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\predicted");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for g in &self.labels {
            out.push_str(g);
            for p in &self.labels {
                let _ = write!(out, ",{}", self.get(g, p));
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies misclassifications; correct predictions are not counted.
pub fn error_matrix<'a>(preds: impl IntoIterator<Item = (&'a str, &'a str)>, labels: &LabelSet) -> ErrorMatrix {
    let mut m = ErrorMatrix {
        labels: labels.iter().map(|l| l.name().to_string()).collect(),
        counts: BTreeMap::new(),
    };
    for (gold, pred) in preds {
        if gold != pred {
            for l in [gold, pred] {
                if !m.labels.iter().any(|x| x == l) {
                    m.labels.push(l.to_string());
                }
            }
            *m.counts.entry((gold.to_string(), pred.to_string())).or_default() += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn neg() -> HashSet<&'static str> {
        ["Other"].into_iter().collect()
    }

    #[test]
    fn hand_counted_case() {
        let c = f1_counts([("A", "A"), ("Other", "B"), ("B", "Other")], &neg());
        assert_eq!(c, F1Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(c.f1(), 0.5);
        let labels = |n: &str| RelationLabel::new(n, n == "Other");
        let preds = vec![
            (labels("A"), labels("A")),
            (labels("Other"), labels("B")),
            (labels("B"), labels("Other")),
        ];
        assert_eq!(micro_f1(&preds, &[labels("Other")]), 0.5);
    }

    #[test]
    fn all_correct_and_empty() {
        assert_eq!(f1_counts([("A", "A"), ("B", "B")], &neg()).f1(), 1.0);
        assert_eq!(f1_counts([("Other", "Other")], &neg()).f1(), 0.0);
        assert_eq!(f1_counts(std::iter::empty(), &neg()).f1(), 0.0);
    }

    #[test]
    fn matrix_counts_errors_only() {
        let labels = LabelSet::semeval();
        let m = error_matrix(
            [
                ("Entity-Destination", "Content-Container"),
                ("Entity-Destination", "Content-Container"),
                ("Entity-Origin", "Product-Producer"),
                ("Cause-Effect", "Cause-Effect"),
            ],
            &labels,
        );
        assert_eq!(m.get("Entity-Destination", "Content-Container"), 2);
        assert_eq!(m.get("Entity-Origin", "Product-Producer"), 1);
        assert_eq!(m.total(), 3);
        assert_eq!(m.worst(1)[0].count, 2);
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv
            .lines()
            .next()
            .unwrap()
            .starts_with("gold\\predicted,Other,Component-Whole"));
        assert_eq!(error_matrix([("A", "A")], &labels).total(), 0);
    }

    proptest! {
        #[test]
        fn f1_is_bounded_and_order_free(pairs in prop::collection::vec((0usize..4, 0usize..4), 0..40)) {
            let names = ["Other", "A", "B", "C"];
            let preds: Vec<(&str, &str)> = pairs.iter().map(|&(g, p)| (names[g], names[p])).collect();
            let f = f1_counts(preds.iter().copied(), &neg()).f1();
            prop_assert!((0.0..=1.0).contains(&f));
            let rev: Vec<_> = preds.iter().rev().copied().collect();
            prop_assert_eq!(f, f1_counts(rev, &neg()).f1());
            let m = error_matrix(preds.iter().copied(), &LabelSet::new(&names, &["Other"]).unwrap());
            for g in &names[1..] {
                let missed = preds.iter().filter(|(gg, p)| gg == g && p != g).count();
                prop_assert_eq!(m.row_sum(g), missed);
            }
        }
    }
}
