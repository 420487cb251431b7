//! Hashed character n-gram and word features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SupervisorError;
use crate::hashing::StableHasher;

/// Shape of the reference encoder: hashed sparse features followed by a
/// dense linear projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub feature_space: usize,
    pub ngram_range: (usize, usize),
    pub hash_seed: u64,
    pub normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            feature_space: 1 << 14,
            ngram_range: (3, 5),
            hash_seed: 0,
            normalize: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), SupervisorError> {
        let bad = |m: String| Err(SupervisorError::InvalidConfig(m));
        if self.dim < 2 {
            return bad(format!("dim {} < 2", self.dim));
        }
        if self.feature_space < self.dim {
            return bad(format!(
                "feature_space {} smaller than dim {}",
                self.feature_space, self.dim
            ));
        }
        if self.feature_space > u32::MAX as usize {
            return bad("feature_space exceeds u32 range".into());
        }
        let (lo, hi) = self.ngram_range;
        if lo == 0 || lo > hi {
            return bad(format!("invalid ngram range ({lo}, {hi})"));
        }
        Ok(())
    }
}

/// Sparse vector as (bucket, value) pairs sorted by bucket.
pub type SparseFeatures = Vec<(u32, f64)>;

fn bucket(config: &EncoderConfig, namespace: u8, gram: &str) -> u32 {
    let h = StableHasher::new(config.hash_seed)
        .write(&[namespace])
        .write_str(gram)
        .finish();
    (h % config.feature_space as u64) as u32
}

/// L2-normalized counts of hashed character n-grams (over the lowercased,
/// whitespace-collapsed text padded with one space on each side) and word
/// unigrams.
pub fn extract_features(config: &EncoderConfig, text: &str) -> Result<SparseFeatures, SupervisorError> {
    let lowered = text.to_lowercase();
    let words: Vec<&str> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(SupervisorError::EmptyText);
    }
    let padded: Vec<char> = format!(" {collapsed} ").chars().collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let (lo, hi) = config.ngram_range;
    let mut gram = String::new();
    for n in lo..=hi {
        if n > padded.len() {
            break;
        }
        for window in padded.windows(n) {
            gram.clear();
            gram.extend(window);
            *counts.entry(bucket(config, b'c', &gram)).or_default() += 1.0;
        }
    }
    if padded.len() < lo {
        let whole: String = padded.iter().collect();
        *counts.entry(bucket(config, b'c', &whole)).or_default() += 1.0;
    }
    for w in words {
        *counts.entry(bucket(config, b'w', w)).or_default() += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    Ok(counts.into_iter().map(|(i, c)| (i, c / norm)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_unit_length_and_sorted() {
        let cfg = EncoderConfig::default();
        let f = extract_features(&cfg, "The key phrase \"bunch of flowers\"").unwrap();
        let norm: f64 = f.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(f.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(f.iter().all(|(i, _)| (*i as usize) < cfg.feature_space));
    }

    #[test]
    fn case_and_spacing_do_not_matter() {
        let cfg = EncoderConfig::default();
        assert_eq!(
            extract_features(&cfg, "Hello   World").unwrap(),
            extract_features(&cfg, " hello world ").unwrap()
        );
    }

    #[test]
    fn short_and_empty_text() {
        let cfg = EncoderConfig::default();
        assert!(matches!(
            extract_features(&cfg, "  \t"),
            Err(SupervisorError::EmptyText)
        ));
        assert!(!extract_features(&cfg, "a").unwrap().is_empty());
        let wide = EncoderConfig {
            ngram_range: (5, 6),
            ..EncoderConfig::default()
        };
        assert!(!extract_features(&wide, "ab").unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let c = |dim, fs, lo, hi| EncoderConfig {
            dim,
            feature_space: fs,
            ngram_range: (lo, hi),
            ..EncoderConfig::default()
        };
        assert!(c(1, 16, 3, 5).validate().is_err());
        assert!(c(32, 16, 3, 5).validate().is_err());
        assert!(c(8, 16, 5, 3).validate().is_err());
        assert!(c(8, 16, 0, 3).validate().is_err());
    }
}
