//! Minibatch gradient descent on the projection.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::encoder::{EncoderConfig, SparseFeatures};
use super::loss::{loss_and_sim_grads, DEFAULT_TAU};
use super::model::SupervisorModel;
use super::pairs::{build_pairs, Pair, PairBatch, PairClass, PairSamplerConfig};
use super::{dot, Result, SupervisorError};
use crate::domain::RationaleStore;
use crate::hashing::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub sampler: PairSamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-2,
            tau: DEFAULT_TAU,
            seed: 0,
            encoder: EncoderConfig::default(),
            sampler: PairSamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.batch_size == 0 {
            return Err(SupervisorError::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(SupervisorError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(SupervisorError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub pair_counts: BTreeMap<PairClass, usize>,
    pub empty_classes: Vec<PairClass>,
}

/// Dense gradient buffer that remembers which feature columns were touched.
struct Gradient {
    dim: usize,
    values: Vec<f64>,
    touched: Vec<u32>,
    is_touched: Vec<bool>,
}

impl Gradient {
    fn new(dim: usize, feature_space: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * feature_space],
            touched: Vec::new(),
            is_touched: vec![false; feature_space],
        }
    }

    fn add(&mut self, features: &SparseFeatures, dz: &[f64]) {
        for &(f, v) in features {
            let fi = f as usize;
            if !self.is_touched[fi] {
                self.is_touched[fi] = true;
                self.touched.push(f);
            }
            let col = &mut self.values[fi * self.dim..(fi + 1) * self.dim];
            col.iter_mut().zip(dz).for_each(|(g, d)| *g += v * d);
        }
    }

    /// `weights -= lr * grad`, then clears the buffer.
    fn apply(&mut self, weights: &mut [f64], lr: f64) {
        for &f in &self.touched {
            let fi = f as usize;
            let range = fi * self.dim..(fi + 1) * self.dim;
            let col = &mut self.values[range.clone()];
            weights[range].iter_mut().zip(col.iter_mut()).for_each(|(w, g)| {
                *w -= lr * *g;
                *g = 0.0;
            });
            self.is_touched[fi] = false;
        }
        self.touched.clear();
    }
}

fn normalized(mut z: Vec<f64>, normalize: bool) -> (Vec<f64>, f64) {
    if !normalize {
        return (z, 1.0);
    }
    let norm = dot(&z, &z).sqrt();
    if norm > 0.0 {
        z.iter_mut().for_each(|x| *x /= norm);
    }
    (z, norm)
}

/// Loss of the pairs and its gradient with respect to the unnormalized
/// projection of every text involved, in order of first appearance.
/// A text index and the loss gradient with respect to its projection.
type TextGrad = (usize, Vec<f64>);

fn projection_grads(
    model: &SupervisorModel,
    projected: impl Fn(usize) -> Vec<f64>,
    pos: &[Pair],
    neg: &[Pair],
) -> Result<(f64, Vec<TextGrad>)> {
    let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
    let mut order: Vec<usize> = Vec::new();
    for p in pos.iter().chain(neg) {
        for t in [p.a, p.b] {
            slot.entry(t).or_insert_with(|| {
                order.push(t);
                order.len() - 1
            });
        }
    }
    let normalize = model.config().normalize;
    let embedded: Vec<(Vec<f64>, f64)> = order.iter().map(|&t| normalized(projected(t), normalize)).collect();
    let sim = |p: &Pair| dot(&embedded[slot[&p.a]].0, &embedded[slot[&p.b]].0);
    let pos_sims: Vec<f64> = pos.iter().map(sim).collect();
    let neg_sims: Vec<f64> = neg.iter().map(sim).collect();
    let (loss, g_pos, g_neg) = loss_and_sim_grads(&pos_sims, &neg_sims, model.tau())?;

    let dim = model.dim();
    let mut de = vec![vec![0.0; dim]; order.len()];
    for (p, g) in pos.iter().zip(&g_pos).chain(neg.iter().zip(&g_neg)) {
        let (sa, sb) = (slot[&p.a], slot[&p.b]);
        for (d, (xa, xb)) in embedded[sa].0.iter().zip(&embedded[sb].0).enumerate() {
            de[sa][d] += g * xb;
            de[sb][d] += g * xa;
        }
    }
    let grads = order
        .iter()
        .zip(embedded.iter().zip(de))
        .map(|(&t, ((e, norm), de_t))| {
            let dz = if normalize && *norm > 0.0 {
                let proj = dot(e, &de_t);
                e.iter().zip(&de_t).map(|(ei, gi)| (gi - ei * proj) / norm).collect()
            } else {
                de_t
            };
            (t, dz)
        })
        .collect();
    Ok((loss, grads))
}

fn sparse_dot(a: &SparseFeatures, b: &SparseFeatures) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Texts up to this count are trained through their Gram matrix.
const KERNEL_LIMIT: usize = 2048;

/// Gradient steps tracked in projection space. Every update to the weights
/// is a sum of outer products `dz ⊗ x` over the batch texts, so each text's
/// projection moves by `-lr * Σ dz_s (x_s · x_t)`; the weights are rebuilt
/// from the accumulated coefficients at the end.
struct KernelSteps {
    n: usize,
    dim: usize,
    gram: Vec<f64>,
    projected: Vec<f64>,
    coef: Vec<f64>,
}

impl KernelSteps {
    fn new(model: &SupervisorModel, features: &[SparseFeatures]) -> Self {
        let (n, dim) = (features.len(), model.dim());
        let mut gram = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let g = sparse_dot(&features[a], &features[b]);
                gram[a * n + b] = g;
                gram[b * n + a] = g;
            }
        }
        let projected = features.iter().flat_map(|f| model.project(f)).collect();
        Self {
            n,
            dim,
            gram,
            projected,
            coef: vec![0.0; n * dim],
        }
    }

    fn projection(&self, t: usize) -> Vec<f64> {
        self.projected[t * self.dim..(t + 1) * self.dim].to_vec()
    }

    fn step(&mut self, grads: &[(usize, Vec<f64>)], lr: f64) {
        let dim = self.dim;
        for (s, dz) in grads {
            self.coef[s * dim..(s + 1) * dim]
                .iter_mut()
                .zip(dz)
                .for_each(|(c, d)| *c -= lr * d);
            for t in 0..self.n {
                let g = self.gram[t * self.n + s];
                if g == 0.0 {
                    continue;
                }
                self.projected[t * dim..(t + 1) * dim]
                    .iter_mut()
                    .zip(dz)
                    .for_each(|(z, d)| *z -= lr * g * d);
            }
        }
    }

    fn finish(self, model: &mut SupervisorModel, features: &[SparseFeatures]) {
        let dim = self.dim;
        let weights = model.weights_mut();
        for (t, f) in features.iter().enumerate() {
            let c = &self.coef[t * dim..(t + 1) * dim];
            for &(fi, v) in f {
                let fi = fi as usize;
                weights[fi * dim..(fi + 1) * dim]
                    .iter_mut()
                    .zip(c)
                    .for_each(|(w, ci)| *w += v * ci);
            }
        }
    }
}

enum Stepper {
    Kernel(KernelSteps),
    Direct(Gradient),
}

fn featurize(model: &SupervisorModel, batch: &PairBatch) -> Result<Vec<SparseFeatures>> {
    batch.texts.iter().map(|t| model.features(t)).collect()
}

/// Full-batch loss and its gradient with respect to the row-major
/// `dim × feature_space` projection.
pub fn loss_and_gradient(model: &SupervisorModel, batch: &PairBatch) -> Result<(f64, Vec<f64>)> {
    let features = featurize(model, batch)?;
    let (dim, fs) = (model.dim(), model.config().feature_space);
    let mut grad = Gradient::new(dim, fs);
    let (loss, grads) = projection_grads(model, |t| model.project(&features[t]), &batch.pos, &batch.neg)?;
    for (t, dz) in &grads {
        grad.add(&features[*t], dz);
    }
    let mut out = vec![0.0; dim * fs];
    for f in 0..fs {
        for d in 0..dim {
            out[d * fs + f] = grad.values[f * dim + d];
        }
    }
    Ok((loss, out))
}

/// Trains a freshly initialized model on all pairs of `store`.
pub fn train(store: &RationaleStore, config: &TrainConfig) -> Result<(SupervisorModel, TrainReport)> {
    config.validate()?;
    let batch = build_pairs(store, &config.sampler);
    let model = SupervisorModel::new(config.encoder.clone(), config.tau, derive_seed(config.seed, &["init"]))?;
    train_on_pairs(model, &batch, config)
}

/// Continues training `model` on a prepared batch. Each epoch shuffles the
/// positive and negative pairs and splits both evenly across minibatches so
/// every minibatch has at least one positive.
pub fn train_on_pairs(
    model: SupervisorModel,
    batch: &PairBatch,
    config: &TrainConfig,
) -> Result<(SupervisorModel, TrainReport)> {
    descend(model, batch, config, batch.texts.len() <= KERNEL_LIMIT)
}

fn descend(
    mut model: SupervisorModel,
    batch: &PairBatch,
    config: &TrainConfig,
    use_kernel: bool,
) -> Result<(SupervisorModel, TrainReport)> {
    config.validate()?;
    if batch.pos.is_empty() {
        return Err(SupervisorError::EmptyPositiveSet);
    }
    let features = featurize(&model, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["shuffle"]));
    let mut stepper = if use_kernel {
        Stepper::Kernel(KernelSteps::new(&model, &features))
    } else {
        Stepper::Direct(Gradient::new(model.dim(), model.config().feature_space))
    };
    let (mut pos, mut neg) = (batch.pos.clone(), batch.neg.clone());
    let total = pos.len() + neg.len();
    let n_batches = total.div_ceil(config.batch_size).clamp(1, pos.len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut sum = 0.0;
        for b in 0..n_batches {
            let p = &pos[b * pos.len() / n_batches..(b + 1) * pos.len() / n_batches];
            let n = &neg[b * neg.len() / n_batches..(b + 1) * neg.len() / n_batches];
            let (loss, grads) = match &stepper {
                Stepper::Kernel(k) => projection_grads(&model, |t| k.projection(t), p, n)?,
                Stepper::Direct(_) => projection_grads(&model, |t| model.project(&features[t]), p, n)?,
            };
            if !loss.is_finite() {
                return Err(SupervisorError::NonFiniteLoss { epoch, batch: b, loss });
            }
            match &mut stepper {
                Stepper::Kernel(k) => k.step(&grads, config.learning_rate),
                Stepper::Direct(g) => {
                    for (t, dz) in &grads {
                        g.add(&features[*t], dz);
                    }
                    g.apply(model.weights_mut(), config.learning_rate);
                }
            }
            sum += loss;
        }
        let mean = sum / n_batches as f64;
        info!(epoch, loss = mean, "supervisor epoch");
        epoch_losses.push(mean);
    }
    if let Stepper::Kernel(k) = stepper {
        k.finish(&mut model, &features);
    }
    let pair_counts = PairClass::ALL.into_iter().map(|c| (c, batch.count(c))).collect();
    let report = TrainReport {
        epoch_losses,
        pair_counts,
        empty_classes: batch.empty_classes(),
    };
    Ok((model, report))
}

/// Mean similarity over positive pairs minus mean over negative pairs.
pub fn separation(model: &SupervisorModel, batch: &PairBatch) -> Result<f64> {
    let embedded = batch
        .texts
        .iter()
        .map(|t| Ok(model.embed_features(&model.features(t)?).0))
        .collect::<Result<Vec<_>>>()?;
    let mean = |pairs: &[Pair]| {
        if pairs.is_empty() {
            return 0.0;
        }
        pairs.iter().map(|p| dot(&embedded[p.a], &embedded[p.b])).sum::<f64>() / pairs.len() as f64
    };
    Ok(mean(&batch.pos) - mean(&batch.neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::supervisor::loss::contrastive_loss;
    use rand::Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            dim: 4,
            feature_space: 32,
            ..EncoderConfig::default()
        }
    }

    fn batch(texts: &[&str], pos: &[(usize, usize)], neg: &[(usize, usize)]) -> PairBatch {
        let mk = |v: &[(usize, usize)], class| v.iter().map(|&(a, b)| Pair { a, b, class }).collect();
        PairBatch {
            texts: texts.iter().map(|s| s.to_string()).collect(),
            pos: mk(pos, PairClass::SameGoldUnbiased),
            neg: mk(neg, PairClass::DifferentBiasSituations),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = batch(
            &[
                "goes into the box",
                "moved into a bin",
                "inside the jar",
                "made by the firm",
            ],
            &[(0, 1)],
            &[(0, 2), (1, 3), (2, 3)],
        );
        let cfg = tiny();
        let proj: Vec<f64> = (0..cfg.dim * cfg.feature_space)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let model = SupervisorModel::from_projection(cfg.clone(), 0.2, &proj).unwrap();
        let (_, g) = loss_and_gradient(&model, &b).unwrap();
        let h = 1e-5;
        for i in 0..proj.len() {
            let mut plus = proj.clone();
            plus[i] += h;
            let mut minus = proj.clone();
            minus[i] -= h;
            let lp = contrastive_loss(&SupervisorModel::from_projection(cfg.clone(), 0.2, &plus).unwrap(), &b).unwrap();
            let lm =
                contrastive_loss(&SupervisorModel::from_projection(cfg.clone(), 0.2, &minus).unwrap(), &b).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-3),
                "{i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn zero_loss_leaves_projection_unchanged() {
        let b = batch(&["alpha beta", "gamma delta"], &[(0, 1)], &[]);
        let model = SupervisorModel::new(tiny(), 0.2, 1).unwrap();
        let before = model.projection();
        let (trained, report) = train_on_pairs(
            model,
            &b,
            &TrainConfig {
                epochs: 3,
                encoder: tiny(),
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(trained.projection(), before);
        assert!(report.epoch_losses.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let b = batch(
            &[
                "goes into the box",
                "moved into a bin",
                "inside the jar",
                "kept inside the can",
                "made by the firm",
            ],
            &[(0, 1), (2, 3)],
            &[(0, 2), (1, 3), (0, 4), (2, 4)],
        );
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 2,
            learning_rate: 0.05,
            encoder: EncoderConfig {
                dim: 8,
                feature_space: 512,
                ..EncoderConfig::default()
            },
            ..TrainConfig::default()
        };
        let model = SupervisorModel::new(cfg.encoder.clone(), cfg.tau, 2).unwrap();
        let before = contrastive_loss(&model, &b).unwrap();
        let (m1, r1) = train_on_pairs(model.clone(), &b, &cfg).unwrap();
        let (m2, r2) = train_on_pairs(model, &b, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(contrastive_loss(&m1, &b).unwrap() < before);
    }

    #[test]
    fn gram_steps_match_direct_updates() {
        let b = batch(
            &[
                "goes into the box",
                "moved into a bin",
                "inside the jar",
                "kept inside the can",
                "made by the firm",
            ],
            &[(0, 1), (2, 3)],
            &[(0, 2), (1, 3), (0, 4), (2, 4)],
        );
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 3,
            learning_rate: 0.1,
            encoder: EncoderConfig {
                dim: 6,
                feature_space: 256,
                ..EncoderConfig::default()
            },
            ..TrainConfig::default()
        };
        let model = SupervisorModel::new(cfg.encoder.clone(), cfg.tau, 4).unwrap();
        let (k, rk) = descend(model.clone(), &b, &cfg, true).unwrap();
        let (d, rd) = descend(model, &b, &cfg, false).unwrap();
        for (x, y) in k.projection().iter().zip(d.projection()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
        for (x, y) in rk.epoch_losses.iter().zip(&rd.epoch_losses) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_positive_set_is_an_error() {
        let b = batch(&["a b c", "d e f"], &[], &[(0, 1)]);
        let model = SupervisorModel::new(tiny(), 0.2, 1).unwrap();
        assert!(matches!(
            train_on_pairs(model, &b, &TrainConfig::default()),
            Err(SupervisorError::EmptyPositiveSet)
        ));
    }
}
