//! Run configuration: TOML file, `--set` overrides, and the effective config
//! echoed into every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use perception_core::corpus::{CorpusKind, Grammar, PerturbationKind};
use perception_core::featurizer::FeatureConfig;
use perception_core::metrics::Smoothing;
use perception_core::perception::{EvalOptions, Hyperparams};
use perception_core::uncertainty::WeightMode;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Output directory for all artifacts.
    pub out: PathBuf,
    pub features: FeatureConfig,
    /// Network shape, optimizer, loss weights and Monte Carlo passes.
    pub model: Hyperparams,
    pub scoring: ScoringConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub perturb: PerturbConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            features: FeatureConfig::default(),
            model: Hyperparams::default(),
            scoring: ScoringConfig::default(),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            perturb: PerturbConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub weight_mode: WeightMode,
    pub references_per_generation: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let e = EvalOptions::default();
        ScoringConfig {
            weight_mode: e.weight_mode,
            references_per_generation: e.references_per_generation,
        }
    }
}

/// Corpus locations. When `train` is unset, `train` builds a synthetic corpus
/// from `[synth]` and splits it by `train_frac` / `dev_frac`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: CorpusKind,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Defaults to `<out>/test.jsonl` when scoring.
    pub test: Option<PathBuf>,
    /// Defaults to `<out>/checkpoint.json` when scoring.
    pub checkpoint: Option<PathBuf>,
    pub train_frac: f64,
    pub dev_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: CorpusKind::Conditional,
            train: None,
            dev: None,
            test: None,
            checkpoint: None,
            train_frac: 0.7,
            dev_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrammarName {
    RefGrammar,
    NearGrammar,
    CorruptGrammar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub grammar: GrammarName,
    /// Perturbation used by `corrupt_grammar`.
    pub kind: PerturbationKind,
    pub level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 400,
            grammar: GrammarName::CorruptGrammar,
            kind: PerturbationKind::WordSubstitute,
            level: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn grammar(&self) -> Grammar {
        match self.grammar {
            GrammarName::RefGrammar => Grammar::RefGrammar,
            GrammarName::NearGrammar => Grammar::NearGrammar,
            GrammarName::CorruptGrammar => Grammar::CorruptGrammar {
                kind: self.kind,
                level: self.level,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub input: Option<PathBuf>,
    pub kind: PerturbationKind,
    pub level: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            input: None,
            kind: PerturbationKind::WordSubstitute,
            level: 0.2,
        }
    }
}

/// Graded-quality harness: one system per corruption level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub levels: Vec<f64>,
    pub n: usize,
    pub kind: PerturbationKind,
    pub bleu_smoothing: Smoothing,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            levels: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            n: 400,
            kind: PerturbationKind::WordSubstitute,
            bleu_smoothing: Smoothing::AddOne,
        }
    }
}

impl RunConfig {
    /// Builds the effective config: file (if any), then `key=value`
    /// overrides in order, then the explicit seed and output directory.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Input(format!("invalid config: {}", e.message())))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(o) = out {
            config.out = o.to_path_buf();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        if self.scoring.references_per_generation == 0 {
            return Err(CliError::Input("scoring.references_per_generation must be >= 1".into()));
        }
        if self.bench.levels.is_empty() {
            return Err(CliError::Input("bench.levels must not be empty".into()));
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            mc_passes: self.model.mc_passes,
            weight_mode: self.scoring.weight_mode,
            references_per_generation: self.scoring.references_per_generation,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.data.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.json"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.data.test.clone().unwrap_or_else(|| self.out.join("test.jsonl"))
    }
}

/// Applies one `dotted.key=value` override. The value is read as a TOML value
/// when it parses as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Input(format!("bad override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Input(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
