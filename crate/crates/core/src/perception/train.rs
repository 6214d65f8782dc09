use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::penalty::{accumulate_penalty, GpMode};
use super::{clamp_confidence, pair_softmax, sigmoid, LossBreakdown, CONFIDENCE_FLOOR};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::featurizer::{featurize_pair, FeatureConfig, FeatureVector};
use crate::rng::{self, stream};
use crate::tinynet::{self, Mode, ModelParams, Sgd, Upstream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Weight of the confidence regularizer.
    pub lambda: f64,
    /// Weight of the gradient penalty.
    pub beta: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescales each batch gradient to at most this global norm; 0 disables.
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    /// Monte Carlo dropout passes per scored pair.
    pub mc_passes: usize,
    pub gp_mode: GpMode,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 0.5,
            beta: 10.0,
            learning_rate: 0.05,
            momentum: 0.9,
            max_grad_norm: 1.0,
            epochs: 30,
            batch_size: 16,
            hidden_dims: vec![128, 64],
            dropout_rate: 0.1,
            mc_passes: 20,
            gp_mode: GpMode::Pairs,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.max_grad_norm >= 0.0 && self.max_grad_norm.is_finite()) {
            return bad("max_grad_norm must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be non-empty and positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.mc_passes < 2 {
            return bad("mc_passes must be >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean: LossBreakdown,
    pub dev_mean_log_p_reference: f64,
    pub batches: Vec<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub feature_config: FeatureConfig,
    pub hyper: Hyperparams,
    pub log: TrainingLog,
}

pub(crate) fn featurize_corpus(corpus: &Corpus, config: &FeatureConfig) -> Vec<(FeatureVector, FeatureVector)> {
    corpus
        .samples()
        .iter()
        .map(|s| {
            (
                featurize_pair(&s.context, &s.generation, config),
                featurize_pair(&s.context, &s.reference, config),
            )
        })
        .collect()
}

/// Mean `ln P_reference` in eval mode.
pub fn mean_log_p_reference(params: &ModelParams, pairs: &[(FeatureVector, FeatureVector)]) -> Result<f64> {
    let mut sum = 0.0;
    for (g, r) in pairs {
        let t = tinynet::forward_pair(params, g, r, Mode::Eval, 0)?;
        sum += pair_softmax(t.raw_score_gen, t.raw_score_ref)?.p_reference.ln();
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean `(||g|| - 1)^2` of the critic over `corpus`, at the observed pairs.
pub fn held_out_penalty(model: &TrainedModel, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::validation("empty corpus"));
    }
    let pairs = featurize_corpus(corpus, &model.feature_config);
    let mut sum = 0.0;
    for (g, r) in &pairs {
        sum += accumulate_penalty(&model.params, g.values(), r.values(), 0.0, None)?.0;
    }
    Ok(sum / pairs.len() as f64)
}

struct Trainer<'a> {
    hyper: &'a Hyperparams,
    dropout_base: u64,
    gp_rng: rng::Rng,
    forward_count: u64,
    grads: ModelParams,
}

impl Trainer<'_> {
    /// Accumulates the batch gradient into `self.grads` and returns the losses.
    fn batch(&mut self, params: &ModelParams, pairs: &[&(FeatureVector, FeatureVector)]) -> Result<LossBreakdown> {
        let h = self.hyper;
        let inv_b = 1.0 / pairs.len() as f64;
        self.grads.fill_zero();
        let (mut l_task, mut l_conf, mut gp) = (0.0, 0.0, 0.0);

        for (gen, reference) in pairs.iter().map(|p| (&p.0, &p.1)) {
            let seed = rng::derive_indexed(self.dropout_base, self.forward_count);
            self.forward_count += 1;
            let trace = tinynet::forward_pair(params, gen, reference, Mode::Train, seed)?;
            let scores = pair_softmax(trace.raw_score_gen, trace.raw_score_ref)?;
            let c_raw = sigmoid(trace.confidence_logit);
            let c = clamp_confidence(c_raw);
            let p_ref = scores.p_reference;
            let p_prime = c * p_ref + (1.0 - c);
            l_task -= p_prime.ln();
            l_conf -= c.ln();

            let dc_dlogit = if c_raw > CONFIDENCE_FLOOR { c * (1.0 - c) } else { 0.0 };
            let dl_dc = (1.0 - p_ref) / p_prime - h.lambda / c;
            let dl_dpref = -c / p_prime;
            let dpref = p_ref * scores.p_generated;
            let upstream = Upstream {
                d_score_gen: -dl_dpref * dpref * inv_b,
                d_score_ref: dl_dpref * dpref * inv_b,
                d_confidence_logit: dl_dc * dc_dlogit * inv_b,
            };
            tinynet::backward_into(params, &trace, upstream, Some(&mut self.grads), false)?;

            let sink = (h.beta > 0.0).then_some(&mut self.grads);
            let coef = h.beta * inv_b;
            let (value, _) = match h.gp_mode {
                GpMode::Pairs => accumulate_penalty(params, gen.values(), reference.values(), coef, sink)?,
                GpMode::Interpolated => {
                    let t: f64 = self.gp_rng.gen();
                    let mixed: Vec<f64> = gen
                        .values()
                        .iter()
                        .zip(reference.values())
                        .map(|(a, b)| t * a + (1.0 - t) * b)
                        .collect();
                    accumulate_penalty(params, &mixed, reference.values(), coef, sink)?
                }
            };
            gp += value;
        }
        if h.max_grad_norm > 0.0 {
            let norm = self.grads.norm();
            if norm > h.max_grad_norm {
                self.grads.scale(h.max_grad_norm / norm);
            }
        }
        Ok(LossBreakdown::new(l_task * inv_b, l_conf * inv_b, gp * inv_b, h.lambda, h.beta))
    }
}

/// Mini-batch training; keeps the parameters of the epoch with the best dev
/// mean `ln P_reference` (earliest on ties).
pub fn train(
    train_set: &Corpus,
    dev_set: &Corpus,
    feature_config: &FeatureConfig,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<TrainedModel> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::validation("training and dev sets must be non-empty"));
    }
    feature_config.validate()?;
    hyper.validate()?;

    let train_pairs = featurize_corpus(train_set, feature_config);
    let dev_pairs = featurize_corpus(dev_set, feature_config);
    let mut params = ModelParams::init(
        feature_config.input_dim(),
        &hyper.hidden_dims,
        hyper.dropout_rate,
        rng::derive(seed, stream::INIT),
    )?;
    let mut optimizer = Sgd::new(hyper.learning_rate, hyper.momentum);
    let mut order_rng = rng::rng_from(rng::derive(seed, stream::BATCH));
    let mut trainer = Trainer {
        hyper,
        dropout_base: rng::derive(seed, stream::DROPOUT),
        gp_rng: rng::rng_from(rng::derive(seed, stream::GP)),
        forward_count: 0,
        grads: params.zeros_like(),
    };

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut batches = Vec::new();
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let diverged = |message: String| Error::Training {
                epoch,
                batch: b + 1,
                message,
            };
            let batch: Vec<_> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let breakdown = trainer.batch(&params, &batch).map_err(|e| diverged(e.to_string()))?;
            if !breakdown.is_finite() {
                return Err(diverged(format!("non-finite loss {breakdown:?}")));
            }
            optimizer
                .step(&mut params, &trainer.grads)
                .map_err(|e| diverged(e.to_string()))?;
            batches.push(breakdown);
        }

        let n = batches.len() as f64;
        let mean = LossBreakdown::new(
            batches.iter().map(|b| b.l_task).sum::<f64>() / n,
            batches.iter().map(|b| b.l_conf).sum::<f64>() / n,
            batches.iter().map(|b| b.gp).sum::<f64>() / n,
            hyper.lambda,
            hyper.beta,
        );
        let dev = mean_log_p_reference(&params, &dev_pairs).map_err(|e| Error::Training {
            epoch,
            batch: batches.len(),
            message: e.to_string(),
        })?;
        if best.as_ref().map_or(true, |(score, _)| dev > *score) {
            best = Some((dev, params.clone()));
            log.selected_epoch = Some(epoch);
        }
        log.epochs.push(EpochLog {
            epoch,
            mean,
            dev_mean_log_p_reference: dev,
            batches,
        });
    }

    Ok(TrainedModel {
        params: best.map_or(params, |(_, p)| p),
        feature_config: feature_config.clone(),
        hyper: hyper.clone(),
        log,
    })
}
