//! Model confidence from Monte Carlo dropout, per-sample weights and the
//! uncertainty-weighted system score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;
use crate::perception::{pair_softmax, Hyperparams};
use crate::rng;
use crate::tinynet::{self, Mode, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_i ∝ 1 / (c_i + m_i)`.
    #[default]
    Literal,
    /// `w_i ∝ c_i + m_i`.
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub p_generated: f64,
    pub p_reference: f64,
    pub c: f64,
    pub m: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub p_sys: f64,
    pub records: Vec<ScoreRecord>,
    pub weight_mode: WeightMode,
    pub mc_passes: usize,
    pub seed: u64,
    pub hyper: Hyperparams,
}

/// `m = 1 - Var(P_generated)` over `passes` dropout forward passes.
///
/// Pass `t` draws its masks from `derive_indexed(seed, t)`; the variance is the
/// population variance, accumulated serially in pass order.
pub fn model_confidence(
    params: &ModelParams,
    gen: &FeatureVector,
    reference: &FeatureVector,
    passes: usize,
    seed: u64,
) -> Result<f64> {
    if passes < 2 {
        return Err(Error::validation("model confidence needs at least 2 passes"));
    }
    let mut values = Vec::with_capacity(passes);
    for t in 0..passes {
        let trace = tinynet::forward_pair(params, gen, reference, Mode::McDropout, rng::derive_indexed(seed, t as u64))?;
        values.push(pair_softmax(trace.raw_score_gen, trace.raw_score_ref)?.p_generated);
    }
    Ok(1.0 - population_variance(&values))
}

pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

pub fn sample_weights(c: &[f64], m: &[f64], mode: WeightMode) -> Result<Vec<f64>> {
    if c.len() != m.len() {
        return Err(Error::validation(format!(
            "confidence lists differ in length ({} vs {})",
            c.len(),
            m.len()
        )));
    }
    if c.is_empty() {
        return Err(Error::validation("no samples to weight"));
    }
    let raw: Vec<f64> = c
        .iter()
        .zip(m)
        .map(|(&c, &m)| {
            let s = c + m;
            if !(s > 0.0 && s.is_finite()) || c < 0.0 || m < 0.0 {
                return Err(Error::validation(format!("invalid confidences c={c}, m={m}")));
            }
            Ok(match mode {
                WeightMode::Literal => 1.0 / s,
                WeightMode::Confidence => s,
            })
        })
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// Weighted `P_sys` over `(p_generated, c, m)` triples.
///
/// The result is clamped into `[min p, max p]` so rounding never pushes it
/// outside the convex hull of the inputs.
pub fn system_score(records: &[(f64, f64, f64)], mode: WeightMode) -> Result<(f64, Vec<f64>)> {
    if records.is_empty() {
        return Err(Error::validation("cannot score an empty system"));
    }
    let c: Vec<f64> = records.iter().map(|r| r.1).collect();
    let m: Vec<f64> = records.iter().map(|r| r.2).collect();
    let weights = sample_weights(&c, &m, mode)?;
    let p_sys: f64 = records.iter().zip(&weights).map(|(r, w)| w * r.0).sum();
    let lo = records.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    Ok((p_sys.clamp(lo, hi), weights))
}
