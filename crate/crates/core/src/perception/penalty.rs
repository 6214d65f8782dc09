//! Gradient penalty `(||grad_{gen,ref} D||_2 - 1)^2` on the critic difference
//! `D(gen, ref) = f(ref) - f(gen)`, evaluated with dropout disabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;
use crate::tinynet::{self, Mode, ModelParams, ParamGrads, Upstream};

/// Step along the normalized input gradient used to differentiate the
/// gradient norm with respect to the parameters.
pub const GP_FD_STEP: f64 = 1e-4;

/// Where the penalty is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpMode {
    /// At the observed (generation, reference) pairs.
    #[default]
    Pairs,
    /// At `(t * gen + (1 - t) * ref, ref)` with `t ~ U(0, 1)`.
    Interpolated,
}

#[derive(Debug, Clone)]
pub struct GradientPenalty {
    pub value: f64,
    /// `||g||_2` where `g` is the input gradient of `D`.
    pub grad_norm: f64,
    pub param_grads: ParamGrads,
}

const CRITIC: Upstream = Upstream {
    d_score_gen: -1.0,
    d_score_ref: 1.0,
    d_confidence_logit: 0.0,
};

pub fn gradient_penalty(params: &ModelParams, gen: &FeatureVector, reference: &FeatureVector) -> Result<GradientPenalty> {
    gradient_penalty_raw(params, gen.values(), reference.values(), true)
}

/// Penalty value and, when `with_param_grads`, its parameter gradient.
pub fn gradient_penalty_raw(
    params: &ModelParams,
    gen: &[f64],
    reference: &[f64],
    with_param_grads: bool,
) -> Result<GradientPenalty> {
    let mut param_grads = params.zeros_like();
    let (value, grad_norm) = accumulate_penalty(
        params,
        gen,
        reference,
        1.0,
        with_param_grads.then_some(&mut param_grads),
    )?;
    Ok(GradientPenalty {
        value,
        grad_norm,
        param_grads,
    })
}

/// Returns `(value, ||g||)` and adds `coef * d value / d theta` into `grads`.
///
/// With `u = g / ||g||`, the parameter gradient of `||g||` is the parameter
/// gradient of the directional derivative `u . grad D`, taken here as the
/// forward difference `(grad_theta D(z + h u) - grad_theta D(z)) / h`. When
/// `g = 0` the direction is undefined and nothing is accumulated.
pub(crate) fn accumulate_penalty(
    params: &ModelParams,
    gen: &[f64],
    reference: &[f64],
    coef: f64,
    grads: Option<&mut ParamGrads>,
) -> Result<(f64, f64)> {
    let trace = tinynet::forward_raw(params, gen, reference, Mode::Eval, 0)?;
    let (g_gen, g_ref) = tinynet::backward_into(params, &trace, CRITIC, None, true)?;
    let grad_norm = g_gen.iter().chain(&g_ref).map(|v| v * v).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::numeric("non-finite critic input gradient"));
    }
    let value = (grad_norm - 1.0).powi(2);

    if let Some(grads) = grads {
        if grad_norm > 0.0 && coef != 0.0 {
            let h = GP_FD_STEP / grad_norm;
            let shifted_gen: Vec<f64> = gen.iter().zip(&g_gen).map(|(x, g)| x + h * g).collect();
            let shifted_ref: Vec<f64> = reference.iter().zip(&g_ref).map(|(x, g)| x + h * g).collect();
            let shifted = tinynet::forward_raw(params, &shifted_gen, &shifted_ref, Mode::Eval, 0)?;
            let k = coef * 2.0 * (grad_norm - 1.0) / GP_FD_STEP;
            let scaled = |s: f64| Upstream {
                d_score_gen: -s,
                d_score_ref: s,
                d_confidence_logit: 0.0,
            };
            tinynet::backward_into(params, &trace, scaled(-k), Some(&mut *grads), false)?;
            tinynet::backward_into(params, &shifted, scaled(k), Some(grads), false)?;
        }
    }
    Ok((value, grad_norm))
}
