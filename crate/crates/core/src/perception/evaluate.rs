use serde::{Deserialize, Serialize};

use super::train::{featurize_corpus, TrainedModel};
use super::{clamp_confidence, pair_softmax, sigmoid, PairScores};
use crate::corpus::{pair_unconditional_indices, Corpus, CorpusKind, DEFAULT_REFERENCES_PER_GENERATION};
use crate::error::{Error, Result};
use crate::featurizer::{FeatureConfig, FeatureVector};
use crate::rng::{self, stream};
use crate::tinynet::{self, Mode, ModelParams};
use crate::uncertainty::{model_confidence, system_score, ScoreRecord, SystemReport, WeightMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub mc_passes: usize,
    pub weight_mode: WeightMode,
    /// References averaged per generation for unconditional corpora.
    pub references_per_generation: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mc_passes: 20,
            weight_mode: WeightMode::Literal,
            references_per_generation: DEFAULT_REFERENCES_PER_GENERATION,
        }
    }
}

/// Eval-mode scores, data confidence `c` and model confidence `m` of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvaluation {
    pub scores: PairScores,
    pub c: f64,
    pub m: f64,
}

pub fn score_pair(
    params: &ModelParams,
    gen: &FeatureVector,
    reference: &FeatureVector,
    mc_passes: usize,
    seed: u64,
) -> Result<PairEvaluation> {
    let trace = tinynet::forward_pair(params, gen, reference, Mode::Eval, 0)?;
    let scores = pair_softmax(trace.raw_score_gen, trace.raw_score_ref)?;
    let c = clamp_confidence(sigmoid(trace.confidence_logit));
    let m = model_confidence(params, gen, reference, mc_passes, seed)?;
    Ok(PairEvaluation { scores, c, m })
}

/// Scores every test sample and aggregates the uncertainty-weighted `P_sys`.
///
/// Conditional corpora score each sample against its own reference. For
/// unconditional corpora each generation is paired with
/// `references_per_generation` references drawn from the test set and the
/// per-pair `p_generated`, `c` and `m` are averaged. Dropout seeds are keyed by
/// sample id, so conditional results do not depend on sample order.
pub fn evaluate_system(
    model: &TrainedModel,
    test_set: &Corpus,
    feature_config: &FeatureConfig,
    options: &EvalOptions,
    seed: u64,
) -> Result<SystemReport> {
    if model.feature_config.fingerprint() != feature_config.fingerprint() {
        return Err(Error::Compatibility(format!(
            "model was trained with feature config {} but {} was supplied",
            model.feature_config.fingerprint(),
            feature_config.fingerprint()
        )));
    }
    if test_set.is_empty() {
        return Err(Error::validation("empty test set"));
    }
    if options.mc_passes < 2 {
        return Err(Error::validation("mc_passes must be >= 2"));
    }
    let params = &model.params;
    let mc_base = rng::derive(seed, stream::MC);
    let feats = featurize_corpus(test_set, feature_config);
    let samples = test_set.samples();

    let per_sample: Vec<(f64, f64, f64)> = match test_set.kind() {
        CorpusKind::Conditional => samples
            .iter()
            .zip(&feats)
            .map(|(s, (g, r))| {
                let e = score_pair(params, g, r, options.mc_passes, rng::derive_keyed(mc_base, &s.id))?;
                Ok((e.scores.p_generated, e.c, e.m))
            })
            .collect::<Result<_>>()?,
        CorpusKind::Unconditional => {
            let k = options.references_per_generation;
            let picks = pair_unconditional_indices(samples.len(), samples.len(), k, rng::derive(seed, stream::PAIRING))?;
            samples
                .iter()
                .zip(&feats)
                .zip(picks)
                .map(|((s, (g, _)), refs)| {
                    let (mut p, mut c, mut m) = (0.0, 0.0, 0.0);
                    for j in refs {
                        let key = format!("{}\u{1f}{}", s.id, samples[j].id);
                        let e = score_pair(params, g, &feats[j].1, options.mc_passes, rng::derive_keyed(mc_base, &key))?;
                        p += e.scores.p_generated;
                        c += e.c;
                        m += e.m;
                    }
                    let k = k as f64;
                    Ok((p / k, c / k, m / k))
                })
                .collect::<Result<_>>()?
        }
    };

    let (p_sys, weights) = system_score(&per_sample, options.weight_mode)?;
    let records = samples
        .iter()
        .zip(&per_sample)
        .zip(weights)
        .map(|((s, &(p, c, m)), w)| ScoreRecord {
            sample_id: s.id.clone(),
            p_generated: p,
            p_reference: 1.0 - p,
            c,
            m,
            w,
        })
        .collect();
    Ok(SystemReport {
        p_sys,
        records,
        weight_mode: options.weight_mode,
        mc_passes: options.mc_passes,
        seed,
        hyper: model.hyper.clone(),
    })
}
