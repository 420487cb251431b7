//! Contrastive objective over pair similarities.

use super::model::{RationaleEncoder, SupervisorModel};
use super::pairs::PairBatch;
use super::{dot, Result, SupervisorError};

pub const DEFAULT_TAU: f64 = 0.2;

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-log( mean_pos exp(s/tau) / sum_all exp(s/tau) )`.
pub fn loss_from_sims(pos: &[f64], neg: &[f64], tau: f64) -> Result<f64> {
    if pos.is_empty() {
        return Err(SupervisorError::EmptyPositiveSet);
    }
    let scaled_pos = pos.iter().map(|s| s / tau);
    let scaled_all = pos.iter().chain(neg).map(|s| s / tau);
    let log_num = log_sum_exp(scaled_pos) - (pos.len() as f64).ln();
    Ok(log_sum_exp(scaled_all) - log_num)
}

/// Loss plus its derivative with respect to every positive and negative similarity.
pub(crate) fn loss_and_sim_grads(pos: &[f64], neg: &[f64], tau: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let loss = loss_from_sims(pos, neg, tau)?;
    let lse_pos = log_sum_exp(pos.iter().map(|s| s / tau));
    let lse_all = log_sum_exp(pos.iter().chain(neg).map(|s| s / tau));
    let g_pos = pos
        .iter()
        .map(|s| ((s / tau - lse_all).exp() - (s / tau - lse_pos).exp()) / tau)
        .collect();
    let g_neg = neg.iter().map(|s| (s / tau - lse_all).exp() / tau).collect();
    Ok((loss, g_pos, g_neg))
}

/// Loss of a batch under any encoder and temperature.
pub fn contrastive_loss_with(encoder: &dyn RationaleEncoder, tau: f64, batch: &PairBatch) -> Result<f64> {
    if batch.pos.is_empty() {
        return Err(SupervisorError::EmptyPositiveSet);
    }
    let embeddings = batch
        .texts
        .iter()
        .map(|t| encoder.embed(t))
        .collect::<Result<Vec<_>>>()?;
    let sims = |pairs: &[super::pairs::Pair]| -> Vec<f64> {
        pairs.iter().map(|p| dot(&embeddings[p.a], &embeddings[p.b])).collect()
    };
    loss_from_sims(&sims(&batch.pos), &sims(&batch.neg), tau)
}

/// Loss of a batch under the model's own temperature.
pub fn contrastive_loss(model: &SupervisorModel, batch: &PairBatch) -> Result<f64> {
    contrastive_loss_with(model, model.tau(), batch)
}
