//! Experimental harness: k-shot samplers, metrics, efficiency accounting,
//! a synthetic corpus, and the method comparison benchmark.

pub mod bench;
pub mod efficiency;
pub mod metrics;
pub mod records;
pub mod sampling;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::collection::CollectError;
use crate::domain::DataError;
use crate::feedback::FeedbackError;
use crate::llm::LlmError;
use crate::supervisor::SupervisorError;

pub use bench::{
    build_selector, run_benchmark, run_benchmark_on, BackendConfig, BenchConfig, BenchRun, EvalReport, Method,
    MethodReport, MethodStatus, Runner,
};
pub use efficiency::{efficiency_report, EfficiencyReport};
pub use metrics::{error_matrix, f1_counts, micro_f1, Confusion, ErrorMatrix, F1Counts};
pub use records::{join_predictions, load_predictions, save_predictions, PredictionRecord};
pub use sampling::{sample_kshot_document, sample_kshot_sentence, DocumentSample, SentenceSample, Shortfall};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
}
