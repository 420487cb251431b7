//! Supervised rationale verification and feedback for LLM-based relation
//! extraction.
//!
//! The pipeline has three phases:
//!
//! 1. [`collection`] gathers unbiased rationales by label-guided intervention
//!    and biased rationales by diversified intervention.
//! 2. [`supervisor`] trains a rationale encoder contrastively on those
//!    rationales.
//! 3. [`feedback`] verifies each prediction's rationale against the stored
//!    anchors and, when it looks biased, re-prompts the model with feedback
//!    demonstrations retrieved through the supervisor.
//!
//! [`eval`] holds the samplers, metrics and the benchmark harness; [`llm`]
//! the prompt formats and backends.

pub mod collection;
pub mod domain;
pub mod eval;
pub mod feedback;
pub mod hashing;
pub mod llm;
pub mod supervisor;
