//! The realness objective: pair softmax bounding, the data-uncertainty
//! adjusted task loss, the confidence regularizer, the gradient penalty, and
//! the training and evaluation procedures built on them.

mod evaluate;
mod penalty;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use evaluate::{evaluate_system, score_pair, EvalOptions, PairEvaluation};
pub use penalty::{gradient_penalty, gradient_penalty_raw, GpMode, GradientPenalty, GP_FD_STEP};
pub use train::{
    held_out_penalty, mean_log_p_reference, train, EpochLog, Hyperparams, TrainedModel, TrainingLog,
};

/// Smallest probability reported by [`pair_softmax`]. Keeps both members
/// strictly inside (0, 1) in double precision while their sum stays exactly 1.
pub const PROB_FLOOR: f64 = f64::EPSILON / 2.0;

/// Clamp floor applied to the data confidence `c`.
pub const CONFIDENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub p_generated: f64,
    pub p_reference: f64,
}

/// Two-way softmax over the raw critic scores.
///
/// The smaller probability is computed directly from `exp(-|d|)` and the larger
/// as its complement, so the pair sums to one and stays finite for any
/// finite input.
pub fn pair_softmax(raw_gen: f64, raw_ref: f64) -> Result<PairScores> {
    if !raw_gen.is_finite() || !raw_ref.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite raw scores ({raw_gen}, {raw_ref})"
        )));
    }
    let d = raw_ref - raw_gen;
    let e = (-d.abs()).exp();
    let small = (e / (1.0 + e)).max(PROB_FLOOR);
    let large = 1.0 - small;
    Ok(if d >= 0.0 {
        PairScores {
            p_generated: small,
            p_reference: large,
        }
    } else {
        PairScores {
            p_generated: large,
            p_reference: small,
        }
    })
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_confidence(c: f64) -> f64 {
    c.clamp(CONFIDENCE_FLOOR, 1.0)
}

/// `p' = c * p_reference + (1 - c)` with `c` clamped to `[1e-12, 1]`.
pub fn adjusted_probability(p_reference: f64, c: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_reference) || !(0.0..=1.0).contains(&c) {
        return Err(Error::validation(format!(
            "adjusted_probability inputs ({p_reference}, {c}) outside [0, 1]"
        )));
    }
    let c = clamp_confidence(c);
    Ok(c * p_reference + (1.0 - c))
}

fn mean_neg_log(values: &[f64], what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation(format!("{what}: empty batch")));
    }
    let mut sum = 0.0;
    for &v in values {
        if v == 0.0 {
            return Err(Error::numeric(format!("{what}: log of zero")));
        }
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::validation(format!("{what}: entry {v} outside (0, 1]")));
        }
        sum -= v.ln();
    }
    Ok(sum / values.len() as f64)
}

/// Mean of `-ln p'` over the batch.
pub fn loss_task(p_prime: &[f64]) -> Result<f64> {
    mean_neg_log(p_prime, "task loss")
}

/// Mean of `-ln c` over the batch.
pub fn loss_confidence(c: &[f64]) -> Result<f64> {
    mean_neg_log(c, "confidence loss")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_task: f64,
    pub l_conf: f64,
    pub gp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_task: f64, l_conf: f64, gp: f64, lambda: f64, beta: f64) -> Self {
        LossBreakdown {
            l_task,
            l_conf,
            gp,
            total: l_task + lambda * l_conf + beta * gp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_task.is_finite() && self.l_conf.is_finite() && self.gp.is_finite() && self.total.is_finite()
    }
}
