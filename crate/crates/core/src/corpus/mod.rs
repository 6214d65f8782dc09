//! Evaluation records, JSON Lines ingestion, deterministic splits, synthetic
//! corpora, reference pairing for unconditional tasks and text perturbation.

mod grammar;
mod pairing;
mod perturb;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use grammar::{make_synthetic, vocabulary, Grammar, GRAMMAR_SLOTS};
pub use pairing::{pair_unconditional, pair_unconditional_indices, DEFAULT_REFERENCES_PER_GENERATION};
pub use perturb::{perturb, tokenize, PerturbationKind, PerturbationSpec};

/// One evaluation record: optional context, gold reference and system generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default)]
    pub context: String,
    pub reference: String,
    pub generation: String,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        context: impl Into<String>,
        reference: impl Into<String>,
        generation: impl Into<String>,
    ) -> Self {
        Sample {
            id: id.into(),
            context: context.into(),
            reference: reference.into(),
            generation: generation.into(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.reference.trim().is_empty() {
            return Err(format!("sample {:?}: empty reference", self.id));
        }
        if self.generation.trim().is_empty() {
            return Err(format!("sample {:?}: empty generation", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Conditional,
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<Sample>,
    kind: CorpusKind,
}

// Wire form of a line; `context` may be absent for unconditional corpora.
#[derive(Deserialize)]
struct RawSample {
    id: String,
    context: Option<String>,
    reference: String,
    generation: String,
}

impl Corpus {
    /// Builds a corpus, checking the per-sample and per-corpus invariants.
    pub fn new(samples: Vec<Sample>, kind: CorpusKind) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            s.check().map_err(Error::Validation)?;
            if kind == CorpusKind::Unconditional && !s.context.is_empty() {
                return Err(Error::validation(format!(
                    "sample {:?}: unconditional corpus with non-empty context",
                    s.id
                )));
            }
            if let Some(prev) = seen.insert(s.id.as_str(), i) {
                return Err(Error::validation(format!(
                    "duplicate id {:?} at positions {} and {}",
                    s.id, prev, i
                )));
            }
        }
        Ok(Corpus { samples, kind })
    }

    pub fn empty(kind: CorpusKind) -> Self {
        Corpus {
            samples: Vec::new(),
            kind,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn kind(&self) -> CorpusKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Same samples, new generation column. Ids, contexts and references are kept.
    pub fn with_generations<I>(&self, generations: I) -> Result<Corpus>
    where
        I: IntoIterator<Item = String>,
    {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .zip(generations)
            .map(|(s, g)| Sample {
                generation: g,
                ..s.clone()
            })
            .collect();
        if samples.len() != self.samples.len() {
            return Err(Error::validation("generation column length mismatch"));
        }
        Corpus::new(samples, self.kind)
    }

    /// JSON Lines encoding, one object per line with a trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            // Serializing plain string fields cannot fail.
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl_str(text: &str, kind: CorpusKind, origin: &Path) -> Result<Self> {
        let mut samples = Vec::new();
        let mut lines_of: HashMap<String, usize> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawSample = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
            let context = match (raw.context, kind) {
                (Some(c), _) => c,
                (None, CorpusKind::Unconditional) => String::new(),
                (None, CorpusKind::Conditional) => {
                    return Err(Error::Parse {
                        path: origin.to_path_buf(),
                        line: lineno,
                        message: "missing field `context` in conditional corpus".into(),
                    })
                }
            };
            if let Some(first) = lines_of.get(&raw.id) {
                return Err(Error::validation(format!(
                    "{}: duplicate id {:?} on lines {} and {}",
                    origin.display(),
                    raw.id,
                    first,
                    lineno
                )));
            }
            lines_of.insert(raw.id.clone(), lineno);
            let sample = Sample {
                id: raw.id,
                context,
                reference: raw.reference,
                generation: raw.generation,
            };
            sample
                .check()
                .map_err(|m| Error::validation(format!("{}:{}: {}", origin.display(), lineno, m)))?;
            samples.push(sample);
        }
        Corpus::new(samples, kind)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSON Lines corpus, preserving line order.
pub fn load_jsonl(path: impl AsRef<Path>, kind: CorpusKind) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_jsonl_str(&text, kind, path)
}

/// Partition sizes for a split: floor for train and dev, remainder to test.
pub fn split_sizes(n: usize, train_frac: f64, dev_frac: f64) -> Result<(usize, usize, usize)> {
    let in_range = |f: f64| f.is_finite() && (0.0..1.0).contains(&f);
    if !in_range(train_frac) || !in_range(dev_frac) || train_frac + dev_frac >= 1.0 {
        return Err(Error::validation(format!(
            "split fractions ({train_frac}, {dev_frac}) must lie in [0, 1) with sum < 1"
        )));
    }
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_train = floor(train_frac);
    let n_dev = floor(dev_frac).min(n - n_train);
    Ok((n_train, n_dev, n - n_train - n_dev))
}

/// Seeded train/dev/test partition of `corpus`.
pub fn split(
    corpus: &Corpus,
    train_frac: f64,
    dev_frac: f64,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot split an empty corpus"));
    }
    let (n_train, n_dev, _) = split_sizes(corpus.len(), train_frac, dev_frac)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::rng_from(seed));

    let take = |idx: &[usize]| Corpus {
        samples: idx.iter().map(|&i| corpus.samples[i].clone()).collect(),
        kind: corpus.kind,
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_dev]),
        take(&order[n_train + n_dev..]),
    ))
}
