//! Signed feature hashing of word and character n-grams.
//!
//! A (context, candidate) pair maps to `[segment(context); segment(candidate)]`,
//! each segment L2-normalized (or all-zero for empty text).

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::error::{Error, Result};

/// Inclusive n-gram length range, serialized as `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NgramRange(pub usize, pub usize);

impl NgramRange {
    pub fn lengths(self) -> std::ops::RangeInclusive<usize> {
        self.0..=self.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub dim_per_segment: usize,
    /// `None` disables word n-grams.
    pub word_ngrams: Option<NgramRange>,
    /// `None` disables character n-grams.
    pub char_ngrams: Option<NgramRange>,
    pub hash_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim_per_segment: 512,
            word_ngrams: Some(NgramRange(1, 2)),
            char_ngrams: Some(NgramRange(3, 4)),
            hash_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_per_segment < 64 || !self.dim_per_segment.is_power_of_two() {
            return Err(Error::validation(format!(
                "dim_per_segment must be a power of two >= 64, got {}",
                self.dim_per_segment
            )));
        }
        for (name, range) in [("word_ngrams", self.word_ngrams), ("char_ngrams", self.char_ngrams)] {
            if let Some(NgramRange(lo, hi)) = range {
                if lo == 0 || lo > hi {
                    return Err(Error::validation(format!("{name} range [{lo}, {hi}] is invalid")));
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dim_per_segment
    }

    /// Hex SHA-256 over the canonical JSON encoding; stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Model input for one (context, candidate) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Wraps raw values; only finiteness is checked.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("feature vector has non-finite entries"));
        }
        Ok(FeatureVector { values })
    }

    pub fn zeros(len: usize) -> Self {
        FeatureVector {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn context_segment(&self) -> &[f64] {
        &self.values[..self.values.len() / 2]
    }

    pub fn candidate_segment(&self) -> &[f64] {
        &self.values[self.values.len() / 2..]
    }
}

/// Bucket and sign of one n-gram key.
pub fn hash_feature(key: &[u8], config: &FeatureConfig) -> (usize, f64) {
    let h = XxHash64::oneshot(config.hash_seed, key);
    let index = (h & (config.dim_per_segment as u64 - 1)) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (index, sign)
}

/// Hash keys of every configured n-gram in `text`, in a fixed order.
///
/// Word n-grams are keyed `w` + tokens joined by U+001F; character n-grams are
/// keyed `c` + the n characters of the space-padded, whitespace-normalized text.
pub fn ngram_keys(text: &str, config: &FeatureConfig) -> Vec<Vec<u8>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut keys = Vec::new();
    if tokens.is_empty() {
        return keys;
    }
    if let Some(range) = config.word_ngrams {
        for n in range.lengths() {
            for gram in tokens.windows(n) {
                let mut key = b"w".to_vec();
                key.extend_from_slice(gram.join("\u{1f}").as_bytes());
                keys.push(key);
            }
        }
    }
    if let Some(range) = config.char_ngrams {
        let padded: Vec<char> = format!(" {} ", tokens.join(" ")).chars().collect();
        for n in range.lengths() {
            for gram in padded.windows(n) {
                let mut key = b"c".to_vec();
                key.extend(gram.iter().collect::<String>().as_bytes());
                keys.push(key);
            }
        }
    }
    keys
}

pub fn featurize_segment(text: &str, config: &FeatureConfig) -> Vec<f64> {
    let mut out = vec![0.0; config.dim_per_segment];
    for key in ngram_keys(text, config) {
        let (i, s) = hash_feature(&key, config);
        out[i] += s;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Signed collisions can cancel to an exact zero vector; leave it as is.
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

pub fn featurize_pair(context: &str, candidate: &str, config: &FeatureConfig) -> FeatureVector {
    let mut values = featurize_segment(context, config);
    values.extend(featurize_segment(candidate, config));
    FeatureVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words_only(dim: usize) -> FeatureConfig {
        FeatureConfig {
            dim_per_segment: dim,
            word_ngrams: Some(NgramRange(1, 1)),
            char_ngrams: None,
            hash_seed: 0,
        }
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn empty_text_is_zero() {
        let v = featurize_segment("", &FeatureConfig::default());
        assert_eq!(v.len(), 512);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic() {
        let cfg = FeatureConfig::default();
        assert_eq!(featurize_segment("the cat sat", &cfg), featurize_segment("the cat sat", &cfg));
    }

    // Bucket indices recomputed with an independent xxh64 implementation.
    #[test]
    fn word_unigrams_land_on_oracle_indices() {
        let cfg = words_only(64);
        let v = featurize_segment("cat sat", &cfg);
        let mut expected = vec![0.0; 64];
        for w in ["cat", "sat"] {
            let mut key = b"w".to_vec();
            key.extend_from_slice(w.as_bytes());
            let h = xxhash_rust::xxh64::xxh64(&key, 0);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            expected[(h % 64) as usize] += sign;
        }
        let n = norm(&expected);
        expected.iter_mut().for_each(|x| *x /= n);
        assert_eq!(v, expected);
        let nonzero = v.iter().filter(|x| **x != 0.0).count();
        assert!(nonzero == 1 || nonzero == 2);
        assert!((norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_segments() {
        let cfg = FeatureConfig::default();
        let both_empty = featurize_pair("", "", &cfg);
        assert_eq!(both_empty.len(), 1024);
        assert!(both_empty.values().iter().all(|&x| x == 0.0));

        let uncond = featurize_pair("", "a story", &cfg);
        assert!(uncond.context_segment().iter().all(|&x| x == 0.0));
        assert!((norm(uncond.candidate_segment()) - 1.0).abs() < 1e-12);

        let ab = featurize_pair("the old farmer", "painted a fence", &cfg);
        let ba = featurize_pair("painted a fence", "the old farmer", &cfg);
        assert_eq!(ab.context_segment(), ba.candidate_segment());
        assert_eq!(ab.candidate_segment(), ba.context_segment());
    }

    #[test]
    fn bigrams_make_order_visible() {
        let cfg = FeatureConfig {
            word_ngrams: Some(NgramRange(1, 2)),
            char_ngrams: None,
            ..FeatureConfig::default()
        };
        assert_ne!(featurize_segment("a b", &cfg), featurize_segment("b a", &cfg));
    }

    #[test]
    fn nonzero_segments_have_unit_norm() {
        let cfg = FeatureConfig::default();
        for text in ["x", "hello world", "the quick brown fox jumps over the lazy dog", "ünïcödé ✓"] {
            assert!((norm(&featurize_segment(text, &cfg)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FeatureConfig::default().validate().is_ok());
        for dim in [32, 100, 0] {
            let cfg = FeatureConfig {
                dim_per_segment: dim,
                ..FeatureConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
        let cfg = FeatureConfig {
            char_ngrams: Some(NgramRange(4, 3)),
            ..FeatureConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = FeatureConfig::default();
        let b = FeatureConfig {
            hash_seed: 1,
            ..FeatureConfig::default()
        };
        assert_eq!(a.fingerprint(), FeatureConfig::default().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
