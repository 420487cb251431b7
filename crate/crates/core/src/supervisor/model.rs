//! Linear projection over hashed features, and its JSON checkpoint.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::encoder::{extract_features, EncoderConfig, SparseFeatures};
use super::{dot, Result, SupervisorError};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Anything that maps rationale text to a fixed-width embedding.
pub trait RationaleEncoder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    fn sim(&self, a: &str, b: &str) -> Result<f64> {
        Ok(dot(&self.embed(a)?, &self.embed(b)?))
    }
}

/// Reference encoder: `embed(t) = normalize(P · features(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorModel {
    config: EncoderConfig,
    tau: f64,
    /// Feature-major: the `dim` weights of bucket `f` start at `f * dim`.
    weights: Vec<f64>,
}

impl SupervisorModel {
    /// Orthogonally initialized projection: rows are orthonormalized Gaussian
    /// draws scaled by `sqrt(feature_space / dim)`, so a unit feature vector
    /// maps to unit expected length.
    pub fn new(config: EncoderConfig, tau: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        validate_tau(tau)?;
        let (dim, fs) = (config.dim, config.feature_space);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut row: Vec<f64> = (0..fs).map(|_| StandardNormal.sample(&mut rng)).collect();
            for prev in &rows {
                let c = dot(&row, prev);
                row.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
            }
            let n = dot(&row, &row).sqrt();
            row.iter_mut().for_each(|x| *x /= n);
            rows.push(row);
        }
        let scale = (fs as f64 / dim as f64).sqrt();
        let mut weights = vec![0.0; dim * fs];
        for (d, row) in rows.iter().enumerate() {
            for (f, w) in row.iter().enumerate() {
                weights[f * dim + d] = w * scale;
            }
        }
        Ok(Self { config, tau, weights })
    }

    /// Builds a model from an explicit `dim × feature_space` row-major projection.
    pub fn from_projection(config: EncoderConfig, tau: f64, projection: &[f64]) -> Result<Self> {
        config.validate()?;
        validate_tau(tau)?;
        let (dim, fs) = (config.dim, config.feature_space);
        if projection.len() != dim * fs {
            return Err(SupervisorError::InvalidConfig(format!(
                "projection has {} entries, expected {}",
                projection.len(),
                dim * fs
            )));
        }
        if projection.iter().any(|w| !w.is_finite()) {
            return Err(SupervisorError::InvalidConfig("projection is not finite".into()));
        }
        let mut weights = vec![0.0; dim * fs];
        for d in 0..dim {
            for f in 0..fs {
                weights[f * dim + d] = projection[d * fs + f];
            }
        }
        Ok(Self { config, tau, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Row-major `dim × feature_space` copy of the projection.
    pub fn projection(&self) -> Vec<f64> {
        let (dim, fs) = (self.config.dim, self.config.feature_space);
        let mut out = vec![0.0; dim * fs];
        for f in 0..fs {
            for d in 0..dim {
                out[d * fs + f] = self.weights[f * dim + d];
            }
        }
        out
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn features(&self, text: &str) -> Result<SparseFeatures> {
        extract_features(&self.config, text)
    }

    /// Unnormalized projection of a feature vector.
    pub fn project(&self, features: &SparseFeatures) -> Vec<f64> {
        let dim = self.config.dim;
        let mut z = vec![0.0; dim];
        for &(f, v) in features {
            let col = &self.weights[f as usize * dim..(f as usize + 1) * dim];
            z.iter_mut().zip(col).for_each(|(zi, w)| *zi += v * w);
        }
        z
    }

    /// Embedding of a feature vector plus the pre-normalization norm (1 when
    /// normalization is off).
    pub fn embed_features(&self, features: &SparseFeatures) -> (Vec<f64>, f64) {
        let mut z = self.project(features);
        if !self.config.normalize {
            return (z, 1.0);
        }
        let norm = dot(&z, &z).sqrt();
        if norm > 0.0 {
            z.iter_mut().for_each(|x| *x /= norm);
        }
        (z, norm)
    }
}

impl RationaleEncoder for SupervisorModel {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_features(&self.features(text)?).0)
    }
}

fn validate_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(SupervisorError::InvalidConfig(format!(
            "tau must be positive, got {tau}"
        )))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: EncoderConfig,
    tau: f64,
    projection: Vec<f64>,
}

pub fn save_model(model: &SupervisorModel, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        tau: model.tau,
        projection: model.projection(),
    };
    let text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    fs::write(path, text).map_err(|source| SupervisorError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<SupervisorModel> {
    let text = fs::read_to_string(path).map_err(|source| SupervisorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |message: String| SupervisorError::CorruptCheckpoint {
        path: path.to_path_buf(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing version".into()))?;
    if found != u64::from(CHECKPOINT_VERSION) {
        return Err(SupervisorError::CheckpointVersion {
            path: path.to_path_buf(),
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    SupervisorModel::from_projection(ckpt.config, ckpt.tau, &ckpt.projection).map_err(|e| match e {
        SupervisorError::InvalidConfig(m) => corrupt(m),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            dim: 16,
            feature_space: 256,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn embeddings_are_pure_and_unit_length() {
        let m = SupervisorModel::new(small(), 0.2, 3).unwrap();
        let a = m.embed("the key phrase links them").unwrap();
        let b = m.embed("the key phrase links them").unwrap();
        assert_eq!(a, b);
        assert!((dot(&a, &a).sqrt() - 1.0).abs() < 1e-9);
        assert!((m.sim("x y z", "x y z").unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(m.sim("abc def", "ghi").unwrap(), m.sim("ghi", "abc def").unwrap());
        assert!(matches!(m.embed(" "), Err(SupervisorError::EmptyText)));
    }

    #[test]
    fn initial_rows_are_orthogonal() {
        let cfg = small();
        let m = SupervisorModel::new(cfg.clone(), 0.2, 9).unwrap();
        let p = m.projection();
        let fs = cfg.feature_space;
        let scale2 = fs as f64 / cfg.dim as f64;
        for i in 0..cfg.dim {
            for j in 0..cfg.dim {
                let d = dot(&p[i * fs..(i + 1) * fs], &p[j * fs..(j + 1) * fs]) / scale2;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9, "{i},{j}: {d}");
            }
        }
    }

    #[test]
    fn hand_built_two_dim_model() {
        let cfg = EncoderConfig {
            dim: 2,
            feature_space: 2,
            ..EncoderConfig::default()
        };
        // bucket a -> (1, 0), bucket b -> (0.6, 0.8)
        let m = SupervisorModel::from_projection(cfg, 0.2, &[1.0, 0.6, 0.0, 0.8]).unwrap();
        let (ea, _) = m.embed_features(&vec![(0, 1.0)]);
        let (eb, _) = m.embed_features(&vec![(1, 1.0)]);
        assert!((dot(&ea, &eb) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn disjoint_texts_are_nearly_orthogonal_at_init() {
        let m = SupervisorModel::new(EncoderConfig::default(), 0.2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let word = |rng: &mut ChaCha8Rng, alphabet: &[u8]| -> String {
            (0..8)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char)
                .collect()
        };
        for _ in 0..100 {
            let a: Vec<String> = (0..6).map(|_| word(&mut rng, b"abcdefghijklm")).collect();
            let b: Vec<String> = (0..6).map(|_| word(&mut rng, b"nopqrstuvwxyz")).collect();
            let fa = m.features(&a.join(" ")).unwrap();
            let fb = m.features(&b.join(" ")).unwrap();
            if fa.iter().any(|(i, _)| fb.iter().any(|(j, _)| i == j)) {
                continue; // hash collision; not a disjoint pair
            }
            let s = m.sim(&a.join(" "), &b.join(" ")).unwrap();
            assert!(s.abs() < 0.3, "{s}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = SupervisorModel::new(small(), 0.3, 1).unwrap();
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(m, back);
        let texts = ["alpha beta", "gamma delta", "alpha gamma", "epsilon"];
        for a in texts {
            for b in texts {
                assert_eq!(m.sim(a, b).unwrap().to_bits(), back.sim(a, b).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn bad_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = SupervisorModel::new(small(), 0.3, 1).unwrap();
        save_model(&m, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(SupervisorError::CorruptCheckpoint { .. })
        ));

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["tau"] = 0.0.into();
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(SupervisorError::CorruptCheckpoint { .. })
        ));

        v["tau"] = 0.2.into();
        v["version"] = 99.into();
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(SupervisorError::CheckpointVersion { found: 99, .. })
        ));
    }
}
