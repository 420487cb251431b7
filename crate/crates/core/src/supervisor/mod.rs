//! Rationale supervisor: an encoder mapping rationale text to unit-length
//! embeddings, trained contrastively to separate biased from unbiased rationales.

pub mod encoder;
pub mod loss;
pub mod model;
pub mod pairs;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use encoder::{extract_features, EncoderConfig, SparseFeatures};
pub use loss::{contrastive_loss, contrastive_loss_with, loss_from_sims, DEFAULT_TAU};
pub use model::{load_model, save_model, RationaleEncoder, SupervisorModel, CHECKPOINT_VERSION};
pub use pairs::{build_pairs, Pair, PairBatch, PairClass, PairSamplerConfig};
pub use train::{loss_and_gradient, separation, train, train_on_pairs, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum SupervisorError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pair batch has no positive pairs")]
    EmptyPositiveSet,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("checkpoint {path}: version {found}, expected {expected}")]
    CheckpointVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = SupervisorError> = std::result::Result<T, E>;

/// Plain dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
