//! Reference-based baselines (sentence BLEU) and correlation statistics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    #[default]
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: Smoothing,
    pub case_fold: bool,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: Smoothing::AddOne,
            case_fold: false,
        }
    }
}

fn tokens(text: &str, case_fold: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if case_fold { t.to_lowercase() } else { t.to_string() })
        .collect()
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in toks.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total for each order `1..=max_n`.
pub fn modified_precisions(candidate: &str, references: &[&str], config: &BleuConfig) -> Result<Vec<(usize, usize)>> {
    if config.max_n == 0 {
        return Err(Error::validation("BLEU max_n must be >= 1"));
    }
    let cand = tokens(candidate, config.case_fold);
    if cand.is_empty() {
        return Err(Error::validation("empty BLEU candidate"));
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokens(r, config.case_fold)).collect();
    if refs.is_empty() || refs.iter().all(Vec::is_empty) {
        return Err(Error::validation("BLEU needs at least one non-empty reference"));
    }
    Ok((1..=config.max_n)
        .map(|n| {
            let counts = ngram_counts(&cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
            let clipped = counts
                .iter()
                .map(|(gram, &c)| {
                    let best = ref_counts.iter().filter_map(|rc| rc.get(gram)).max().copied().unwrap_or(0);
                    c.min(best)
                })
                .sum();
            (clipped, cand.len().saturating_sub(n - 1))
        })
        .collect())
}

/// Sentence BLEU against one or more references.
///
/// The brevity penalty uses the reference length closest to the candidate
/// length (the shorter one on ties).
pub fn bleu(candidate: &str, references: &[&str], config: &BleuConfig) -> Result<f64> {
    let precisions = modified_precisions(candidate, references, config)?;
    let c = tokens(candidate, config.case_fold).len();
    let r = references
        .iter()
        .map(|t| tokens(t, config.case_fold).len())
        .filter(|&l| l > 0)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .expect("checked non-empty");

    let mut log_sum = 0.0;
    for &(matched, total) in &precisions {
        let p = match config.smoothing {
            Smoothing::None if matched == 0 => return Ok(0.0),
            Smoothing::None => matched as f64 / total as f64,
            Smoothing::AddOne => (matched + 1) as f64 / (total + 1) as f64,
        };
        log_sum += p.ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok((bp * (log_sum / precisions.len() as f64).exp()).min(1.0))
}

/// Product-moment correlation with two-pass mean subtraction.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::validation(format!("length mismatch ({} vs {})", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::validation("correlation needs at least two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in correlation input"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    let prod = sxx * syy;
    let denom = if prod.is_finite() && prod > 0.0 { prod.sqrt() } else { sxx.sqrt() * syy.sqrt() };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// 1-based ranks; ties share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::validation(format!("length mismatch ({} vs {})", xs.len(), ys.len())));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}
