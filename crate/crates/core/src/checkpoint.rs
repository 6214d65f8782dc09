//! Versioned JSON checkpoints of trained models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureConfig;
use crate::perception::{Hyperparams, TrainedModel, TrainingLog};
use crate::tinynet::ModelParams;

pub const CHECKPOINT_FORMAT: &str = "perception-score-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    feature_fingerprint: String,
    feature_config: FeatureConfig,
    hyper: Hyperparams,
    selected_epoch: Option<usize>,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    dropout_rate: f64,
    params: ModelParams,
    /// Free-form description of the run that produced the checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<serde_json::Value>,
}

pub fn to_json(model: &TrainedModel) -> String {
    to_json_with_run(model, None)
}

/// As [`to_json`], embedding `run` verbatim; loading ignores it.
pub fn to_json_with_run(model: &TrainedModel, run: Option<&serde_json::Value>) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        feature_fingerprint: model.feature_config.fingerprint(),
        feature_config: model.feature_config.clone(),
        hyper: model.hyper.clone(),
        selected_epoch: model.log.selected_epoch,
        input_dim: model.params.input_dim(),
        hidden_dims: model.params.hidden_dims(),
        dropout_rate: model.params.dropout_rate(),
        params: model.params.clone(),
        run: run.cloned(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    s.push('\n');
    s
}

pub fn save(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(model)).map_err(|e| Error::io(path, e))
}

/// Parses a checkpoint; with `expected` set, rejects a feature-config mismatch.
/// The returned model carries an empty training log.
pub fn from_json(text: &str, expected: Option<&FeatureConfig>) -> Result<TrainedModel> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Compatibility(format!("unreadable checkpoint: {e}")))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Compatibility(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    if file.feature_config.fingerprint() != file.feature_fingerprint {
        return Err(Error::Compatibility("checkpoint feature fingerprint does not match its config".into()));
    }
    if let Some(cfg) = expected {
        if cfg.fingerprint() != file.feature_fingerprint {
            return Err(Error::Compatibility(format!(
                "checkpoint feature config {} does not match run config {}",
                file.feature_fingerprint,
                cfg.fingerprint()
            )));
        }
    }
    let params = ModelParams::from_layers(
        file.params.trunk().to_vec(),
        file.params.score_head().clone(),
        file.params.confidence_head().clone(),
        file.params.dropout_rate(),
    )?;
    if params.input_dim() != file.input_dim
        || params.hidden_dims() != file.hidden_dims
        || params.input_dim() != file.feature_config.input_dim()
        || params.dropout_rate().to_bits() != file.dropout_rate.to_bits()
    {
        return Err(Error::Compatibility("checkpoint shape header disagrees with weights".into()));
    }
    Ok(TrainedModel {
        params,
        feature_config: file.feature_config,
        hyper: file.hyper,
        log: TrainingLog {
            epochs: Vec::new(),
            selected_epoch: file.selected_epoch,
        },
    })
}

pub fn load(path: impl AsRef<Path>, expected: Option<&FeatureConfig>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TrainedModel {
        let feature_config = FeatureConfig {
            dim_per_segment: 64,
            ..FeatureConfig::default()
        };
        TrainedModel {
            params: ModelParams::init(128, &[8, 4], 0.1, 3).unwrap(),
            feature_config,
            hyper: Hyperparams::default(),
            log: TrainingLog::default(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let text = to_json(&m);
        let back = from_json(&text, Some(&m.feature_config)).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(to_json(&back), text);
    }

    #[test]
    fn run_metadata_is_carried_and_ignored_on_load() {
        let m = model();
        let run = serde_json::json!({"seed": 4, "inputs": []});
        let text = to_json_with_run(&m, Some(&run));
        assert!(text.contains("\"run\""));
        assert_eq!(from_json(&text, None).unwrap().params, m.params);
    }

    #[test]
    fn mismatched_feature_config_rejected() {
        let m = model();
        let other = FeatureConfig {
            hash_seed: 7,
            ..m.feature_config.clone()
        };
        assert!(matches!(from_json(&to_json(&m), Some(&other)), Err(Error::Compatibility(_))));
    }

    #[test]
    fn tampered_header_rejected() {
        let text = to_json(&model()).replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(from_json(&text, None), Err(Error::Compatibility(_))));
    }
}
