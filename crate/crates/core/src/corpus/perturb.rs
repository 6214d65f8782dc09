use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::grammar;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    WordDrop,
    WordShuffle,
    WordSubstitute,
    Truncate,
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word_drop" => Ok(PerturbationKind::WordDrop),
            "word_shuffle" => Ok(PerturbationKind::WordShuffle),
            "word_substitute" => Ok(PerturbationKind::WordSubstitute),
            "truncate" => Ok(PerturbationKind::Truncate),
            other => Err(Error::validation(format!("unknown perturbation kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub level: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(Error::validation(format!(
                "perturbation level {} outside [0, 1]",
                self.level
            )));
        }
        Ok(())
    }
}

/// Whitespace tokenization shared by perturbation and the baselines.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

// ceil(x) with a small tolerance so that e.g. 0.3 * 10 = 3.0000000000000004 maps to 3.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Applies a seeded perturbation. Tokens are rejoined with single spaces;
/// level 0 returns the input untouched, and at least one token always remains.
///
/// Random walk per kind, all drawn from `rng_from(spec.seed)`:
/// * `WordDrop`: one `f64` per token in order; the token is dropped when the draw
///   is below `level`. If everything is dropped the first token is kept.
/// * `WordShuffle`: `ceil(level * n)` draws of `i` in `0..n-1`, swapping `i, i+1`.
/// * `WordSubstitute`: the token positions are shuffled, then one replacement is
///   drawn from the grammar vocabulary for every position in that order; the first
///   `ceil(level * n)` positions receive their replacement. Higher levels therefore
///   corrupt a superset of the positions corrupted at lower levels.
/// * `Truncate`: keeps the first `ceil((1 - level) * n)` tokens.
pub fn perturb(text: &str, spec: &PerturbationSpec) -> Result<String> {
    spec.validate()?;
    if text.trim().is_empty() {
        return Err(Error::validation("cannot perturb empty text"));
    }
    if spec.level == 0.0 {
        return Ok(text.to_string());
    }
    let mut tokens = tokenize(text);
    let n = tokens.len();
    let mut rng = rng::rng_from(spec.seed);

    match spec.kind {
        PerturbationKind::WordDrop => {
            let kept: Vec<&str> = tokens
                .iter()
                .copied()
                .filter(|_| rng.gen::<f64>() >= spec.level)
                .collect();
            if kept.is_empty() {
                tokens.truncate(1);
            } else {
                tokens = kept;
            }
        }
        PerturbationKind::WordShuffle => {
            if n >= 2 {
                for _ in 0..ceil_count(spec.level * n as f64) {
                    let i = rng.gen_range(0..n - 1);
                    tokens.swap(i, i + 1);
                }
            }
        }
        PerturbationKind::WordSubstitute => {
            let vocab = grammar::vocabulary();
            let mut positions: Vec<usize> = (0..n).collect();
            positions.shuffle(&mut rng);
            let replacements: Vec<&str> = positions
                .iter()
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect();
            let k = ceil_count(spec.level * n as f64).min(n);
            for (&pos, &word) in positions.iter().zip(&replacements).take(k) {
                tokens[pos] = word;
            }
        }
        PerturbationKind::Truncate => {
            let keep = ceil_count((1.0 - spec.level) * n as f64).clamp(1, n);
            tokens.truncate(keep);
        }
    }
    Ok(tokens.join(" "))
}
