//! Verification of predictions against stored anchors, feedback retrieval,
//! and the iterative correction loop.

pub mod consistency;
pub mod correction;
pub mod document;
pub mod index;
pub mod selector;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::supervisor::SupervisorError;

pub use consistency::{majority_vote, self_consistency};
pub use correction::{generation_seed, predict_icl, predict_with_feedback};
pub use document::{predict_document, DocPrediction};
pub use index::{retrieve_feedback, top_k, verify, Anchor, AnchorIndex, Verdict, Verification};
pub use selector::{DemoSelector, FixedSelector, InitStrategy, RandomSelector, SimilaritySelector};

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("no biased anchors for label {label:?}")]
    NoAnchors { label: String },
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
}

/// What the loop returns when no iterate verifies as unbiased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    LastPrediction,
    #[default]
    MinPbPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Correction rounds after the initial generation.
    pub max_iters: usize,
    /// Biased anchors retrieved per round.
    pub k: usize,
    pub feedback_demo_count: usize,
    pub fallback: Fallback,
    /// Regenerations allowed for an unparseable response; they draw from the
    /// same call budget as correction rounds.
    pub parse_retries: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iters: 5,
            k: 5,
            feedback_demo_count: 5,
            fallback: Fallback::MinPbPrediction,
            parse_retries: 1,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), FeedbackError> {
        for (name, v) in [
            ("max_iters", self.max_iters),
            ("k", self.k),
            ("feedback_demo_count", self.feedback_demo_count),
        ] {
            if v == 0 {
                return Err(FeedbackError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}
