//! The five subcommands. Each returns a summary for the caller to print and
//! writes its artifacts under `config.out`.

use std::path::{Path, PathBuf};

use perception_core::checkpoint;
use perception_core::corpus::{make_synthetic, perturb, split, Corpus, Grammar, PerturbationSpec};
use perception_core::metrics::{bleu, spearman, BleuConfig};
use perception_core::perception::{evaluate_system, train, TrainingLog};
use perception_core::rng::{self, stream};
use perception_core::uncertainty::{ScoreRecord, SystemReport};
use perception_core::Error as CoreError;
use serde::Serialize;

use crate::artifact::{ensure_dir, write, write_json, Provenance};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

fn read_corpus(prov: &mut Provenance, role: &'static str, path: &Path, config: &RunConfig) -> Result<Corpus> {
    let bytes = prov.read(role, path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))?;
    Ok(Corpus::from_jsonl_str(&text, config.data.kind, path)?)
}

#[derive(Debug, Serialize)]
struct TrainingLogFile<'a> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    log: &'a TrainingLog,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub selected_epoch: Option<usize>,
}

/// Trains on `data.train` / `data.dev`, or on a synthetic corpus from
/// `[synth]` whose train, dev and test splits are written next to the model.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let mut prov = Provenance::new("train", config);
    let (train_set, dev_set) = match &config.data.train {
        Some(train_path) => {
            let train_set = read_corpus(&mut prov, "train", train_path, config)?;
            let dev_path = config
                .data
                .dev
                .as_ref()
                .ok_or_else(|| CliError::Input("data.dev is required when data.train is set".into()))?;
            let dev_set = read_corpus(&mut prov, "dev", dev_path, config)?;
            ensure_dir(&config.out)?;
            (train_set, dev_set)
        }
        None => {
            let corpus = make_synthetic(config.synth.grammar(), config.synth.n, config.seed)?;
            let (tr, dev, te) = split(&corpus, config.data.train_frac, config.data.dev_frac, config.seed)?;
            ensure_dir(&config.out)?;
            for (name, part) in [("train.jsonl", &tr), ("dev.jsonl", &dev), ("test.jsonl", &te)] {
                write(&config.out.join(name), part.to_jsonl())?;
            }
            (tr, dev)
        }
    };

    let model = train(&train_set, &dev_set, &config.features, &config.model, config.seed)?;
    let checkpoint_path = config.out.join("checkpoint.json");
    let log_path = config.out.join("training_log.json");
    write(
        &checkpoint_path,
        checkpoint::to_json_with_run(&model, Some(&prov.to_value())),
    )?;
    write_json(
        &log_path,
        &TrainingLogFile {
            provenance: &prov,
            log: &model.log,
        },
    )?;
    Ok(TrainOutcome {
        checkpoint: checkpoint_path,
        log: log_path,
        selected_epoch: model.log.selected_epoch,
    })
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    report: &'a SystemReport,
}

#[derive(Debug)]
pub struct ScoreOutcome {
    pub p_sys: f64,
    pub report: PathBuf,
    pub scores: PathBuf,
}

pub fn write_scores_csv(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    w.write_record(["id", "p_generated", "p_reference", "c", "m", "w"])
        .map_err(csv_err)?;
    for r in records {
        w.serialize((&r.sample_id, r.p_generated, r.p_reference, r.c, r.m, r.w))
            .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    write(path, bytes)
}

pub fn cmd_score(config: &RunConfig) -> Result<ScoreOutcome> {
    let mut prov = Provenance::new("score", config);
    let ckpt_path = config.checkpoint_path();
    let ckpt = prov.read("checkpoint", &ckpt_path)?;
    let ckpt = String::from_utf8(ckpt).map_err(|_| CliError::Input(format!("{} is not UTF-8", ckpt_path.display())))?;
    let model = checkpoint::from_json(&ckpt, Some(&config.features))?;
    let test = read_corpus(&mut prov, "test", &config.test_path(), config)?;

    let report = evaluate_system(&model, &test, &config.features, &config.eval_options(), config.seed)?;
    ensure_dir(&config.out)?;
    let report_path = config.out.join("report.json");
    let scores_path = config.out.join("scores.csv");
    write_json(
        &report_path,
        &ReportFile {
            provenance: &prov,
            report: &report,
        },
    )?;
    write_scores_csv(&scores_path, &report.records)?;
    Ok(ScoreOutcome {
        p_sys: report.p_sys,
        report: report_path,
        scores: scores_path,
    })
}

#[derive(Debug, Serialize)]
struct CorpusManifest<'a> {
    provenance: &'a Provenance,
    output: &'a Path,
    samples: usize,
}

pub fn cmd_synth(config: &RunConfig) -> Result<PathBuf> {
    let prov = Provenance::new("synth", config);
    let corpus = make_synthetic(config.synth.grammar(), config.synth.n, config.seed)?;
    ensure_dir(&config.out)?;
    let path = config.out.join("synthetic.jsonl");
    write(&path, corpus.to_jsonl())?;
    write_json(
        &config.out.join("synthetic.manifest.json"),
        &CorpusManifest {
            provenance: &prov,
            output: &path,
            samples: corpus.len(),
        },
    )?;
    Ok(path)
}

/// Perturbs the generation column of `perturb.input`. Sample `i` uses the
/// seed `derive_indexed(derive(seed, "perturb"), i)`.
pub fn cmd_perturb(config: &RunConfig) -> Result<PathBuf> {
    let mut prov = Provenance::new("perturb", config);
    let input = config
        .perturb
        .input
        .as_ref()
        .ok_or_else(|| CliError::Input("perturb.input is not set".into()))?;
    let bytes = prov.read("input", input)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{} is not UTF-8", input.display())))?;
    let corpus = Corpus::from_jsonl_str(&text, config.data.kind, input)?;
    let base = rng::derive(config.seed, stream::PERTURB);
    let spec = |i: usize| PerturbationSpec {
        kind: config.perturb.kind,
        level: config.perturb.level,
        seed: rng::derive_indexed(base, i as u64),
    };
    spec(0).validate()?;

    ensure_dir(&config.out)?;
    let path = config.out.join("perturbed.jsonl");
    if config.perturb.level == 0.0 {
        write(&path, text.as_bytes())?;
    } else {
        let generations = corpus
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| perturb(&s.generation, &spec(i)))
            .collect::<perception_core::Result<Vec<_>>>()?;
        write(&path, corpus.with_generations(generations)?.to_jsonl())?;
    }
    write_json(
        &config.out.join("perturbed.manifest.json"),
        &CorpusManifest {
            provenance: &prov,
            output: &path,
            samples: corpus.len(),
        },
    )?;
    Ok(path)
}

pub const BENCH_METRICS: [&str; 5] = ["perception_score", "bleu1", "bleu2", "bleu3", "bleu4"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSystem {
    pub level: f64,
    /// Indexed like [`BENCH_METRICS`].
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCorrelation {
    pub metric: &'static str,
    /// Spearman correlation with the corruption level; `None` when undefined.
    pub spearman_vs_level: Option<f64>,
    /// Fewer than three tiers, or an undefined correlation.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub systems: Vec<BenchSystem>,
    pub correlations: Vec<MetricCorrelation>,
}

#[derive(Debug, Serialize)]
struct BenchFile<'a> {
    provenance: &'a Provenance,
    metrics: &'a [&'a str],
    #[serde(flatten)]
    outcome: &'a BenchOutcome,
}

fn mean_bleu(test: &Corpus, max_n: usize, config: &RunConfig) -> Result<f64> {
    let bleu_config = BleuConfig {
        max_n,
        smoothing: config.bench.bleu_smoothing,
        case_fold: false,
    };
    let mut sum = 0.0;
    for s in test.samples() {
        sum += bleu(&s.generation, &[s.reference.as_str()], &bleu_config)?;
    }
    Ok(sum / test.len() as f64)
}

/// One system per corruption level: each is trained and scored on its own
/// synthetic corpus (shared contexts and references), alongside BLEU-1..4.
pub fn cmd_bench(config: &RunConfig) -> Result<BenchOutcome> {
    let prov = Provenance::new("bench", config);
    let mut systems = Vec::with_capacity(config.bench.levels.len());
    for &level in &config.bench.levels {
        let grammar = Grammar::CorruptGrammar {
            kind: config.bench.kind,
            level,
        };
        let corpus = make_synthetic(grammar, config.bench.n, config.seed)?;
        let (tr, dev, te) = split(&corpus, config.data.train_frac, config.data.dev_frac, config.seed)?;
        let model = train(&tr, &dev, &config.features, &config.model, config.seed)?;
        let report = evaluate_system(&model, &te, &config.features, &config.eval_options(), config.seed)?;
        let mut scores = vec![report.p_sys];
        for n in 1..=4 {
            scores.push(mean_bleu(&te, n, config)?);
        }
        systems.push(BenchSystem { level, scores });
    }

    let levels: Vec<f64> = systems.iter().map(|s| s.level).collect();
    let correlations = BENCH_METRICS
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let values: Vec<f64> = systems.iter().map(|s| s.scores[k]).collect();
            let rho = match spearman(&levels, &values) {
                Ok(r) => Some(r),
                Err(CoreError::UndefinedCorrelation(_)) | Err(CoreError::Validation(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(MetricCorrelation {
                metric,
                spearman_vs_level: rho,
                degenerate: rho.is_none() || systems.len() < 3,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = BenchOutcome { systems, correlations };

    ensure_dir(&config.out)?;
    write_json(
        &config.out.join("bench.json"),
        &BenchFile {
            provenance: &prov,
            metrics: &BENCH_METRICS,
            outcome: &outcome,
        },
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["level"];
    header.extend(BENCH_METRICS);
    let csv_err = |e: csv::Error| CliError::Input(format!("cannot write bench.csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for s in &outcome.systems {
        let mut row = vec![s.level.to_string()];
        row.extend(s.scores.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Input(format!("cannot write bench.csv: {e}")))?;
    write(&config.out.join("bench.csv"), bytes)?;
    Ok(outcome)
}
