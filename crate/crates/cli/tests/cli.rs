use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use perception_core::checkpoint;
use perception_core::corpus::{load_jsonl, make_synthetic, pair_unconditional_indices, Corpus, CorpusKind, Grammar, Sample};
use perception_core::featurizer::{featurize_pair, FeatureConfig};
use perception_core::perception::score_pair;
use perception_core::rng::{self, stream};
use perception_core::tinynet::ModelParams;
use perception_core::uncertainty::{system_score, WeightMode};
use serde_json::Value;

const SMALL: [&str; 4] = [
    "--set=features.dim_per_segment=64",
    "--set=model.hidden_dims=[16]",
    "--set=model.epochs=2",
    "--set=synth.n=60",
];

fn pscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pscore"))
        .args(args)
        .output()
        .expect("pscore runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = pscore(args);
    assert!(
        out.status.success(),
        "pscore {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    let mut args = with_small(&["train", "--out", out, "--seed", "4"]);
    args.push("--set=model.epochs=0");
    run_ok(&args);
    let model = checkpoint::load(dir.path().join("checkpoint.json"), None).unwrap();
    let init = ModelParams::init(128, &[16], 0.1, rng::derive(4, stream::INIT)).unwrap();
    assert_eq!(model.params, init);
    let log = json(dir.path().join("training_log.json"));
    assert_eq!(log["epochs"].as_array().unwrap().len(), 0);
    assert_eq!(log["selected_epoch"], Value::Null);
}

#[test]
fn training_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    run_ok(&with_small(&["train", "--out", out]));
    let first = fs::read(dir.path().join("checkpoint.json")).unwrap();
    let first_log = fs::read(dir.path().join("training_log.json")).unwrap();
    run_ok(&with_small(&["train", "--out", out]));
    assert_eq!(fs::read(dir.path().join("checkpoint.json")).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("training_log.json")).unwrap(), first_log);
}

#[test]
fn missing_train_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_train.jsonl");
    let out = pscore(&[
        "train",
        "--out",
        path_str(dir.path()),
        "--set",
        &format!("data.train={:?}", missing.display().to_string()),
        "--set",
        "data.dev=dev.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(path_str(&missing)), "{stderr}");
}

#[test]
fn training_from_files_records_input_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_synthetic(Grammar::corrupt(0.3), 30, 2).unwrap();
    let train = dir.path().join("train.jsonl");
    corpus.save_jsonl(&train).unwrap();
    let out = dir.path().join("run");
    run_ok(&with_small(&[
        "train",
        "--out",
        path_str(&out),
        "--set",
        &format!("data.train={:?}", path_str(&train)),
        "--set",
        &format!("data.dev={:?}", path_str(&train)),
    ]));
    let log = json(out.join("training_log.json"));
    let inputs = log["provenance"]["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    assert_eq!(inputs[0]["role"], "train");
    assert_eq!(inputs[0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(log["provenance"]["config"]["model"]["epochs"], 2);
}

/// A trained small model shared by the scoring tests.
fn trained() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        run_ok(&with_small(&["train", "--out", path_str(&dir), "--seed", "1"]));
        dir
    })
}

#[test]
fn score_prints_p_sys_and_reruns_byte_identically() {
    let model = trained();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = format!("data.checkpoint={:?}", path_str(&model.join("checkpoint.json")));
    let test = format!("data.test={:?}", path_str(&model.join("test.jsonl")));
    let args = with_small(&["score", "--out", path_str(dir.path()), "--set", &ckpt, "--set", &test]);
    let first = run_ok(&args);
    let report = fs::read(dir.path().join("report.json")).unwrap();
    let csv = fs::read(dir.path().join("scores.csv")).unwrap();
    let second = run_ok(&args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), report);
    assert_eq!(fs::read(dir.path().join("scores.csv")).unwrap(), csv);

    let printed = String::from_utf8(first.stdout).unwrap();
    let value: Value = serde_json::from_slice(&report).unwrap();
    assert_eq!(printed.trim(), format!("{:.6}", value["p_sys"].as_f64().unwrap()));
    let header = String::from_utf8(csv).unwrap();
    assert!(header.starts_with("id,p_generated,p_reference,c,m,w\n"));
}

#[test]
fn single_sample_prints_its_p_generated() {
    let model = trained();
    let dir = tempfile::tempdir().unwrap();
    let test = load_jsonl(model.join("test.jsonl"), CorpusKind::Conditional).unwrap();
    let one = Corpus::new(vec![test.samples()[0].clone()], CorpusKind::Conditional).unwrap();
    let test_path = dir.path().join("one.jsonl");
    one.save_jsonl(&test_path).unwrap();
    let out = run_ok(&with_small(&[
        "score",
        "--out",
        path_str(dir.path()),
        "--set",
        &format!("data.checkpoint={:?}", path_str(&model.join("checkpoint.json"))),
        "--set",
        &format!("data.test={:?}", path_str(&test_path)),
    ]));
    let mut rows = csv::Reader::from_path(dir.path().join("scores.csv")).unwrap();
    let row = rows.records().next().unwrap().unwrap();
    let p: f64 = row[1].parse().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("{p:.6}"));
    assert_eq!(row[5].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn feature_config_mismatch_exits_3() {
    let model = trained();
    let dir = tempfile::tempdir().unwrap();
    let out = pscore(&[
        "score",
        "--out",
        path_str(dir.path()),
        "--set=features.dim_per_segment=64",
        "--set=features.hash_seed=5",
        "--set",
        &format!("data.checkpoint={:?}", path_str(&model.join("checkpoint.json"))),
        "--set",
        &format!("data.test={:?}", path_str(&model.join("test.jsonl"))),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unconditional_scores_average_four_references() {
    let model_dir = trained();
    let dir = tempfile::tempdir().unwrap();
    let test = load_jsonl(model_dir.join("test.jsonl"), CorpusKind::Conditional).unwrap();
    let samples: Vec<Sample> = test
        .samples()
        .iter()
        .map(|s| Sample {
            context: String::new(),
            ..s.clone()
        })
        .collect();
    let uncond = Corpus::new(samples, CorpusKind::Unconditional).unwrap();
    let test_path = dir.path().join("uncond.jsonl");
    uncond.save_jsonl(&test_path).unwrap();
    let seed = 6;
    run_ok(&with_small(&[
        "score",
        "--out",
        path_str(dir.path()),
        "--seed",
        "6",
        "--set=data.kind=unconditional",
        "--set",
        &format!("data.checkpoint={:?}", path_str(&model_dir.join("checkpoint.json"))),
        "--set",
        &format!("data.test={:?}", path_str(&test_path)),
    ]));
    let report = json(dir.path().join("report.json"));

    let model = checkpoint::load(model_dir.join("checkpoint.json"), None).unwrap();
    let fc = FeatureConfig {
        dim_per_segment: 64,
        ..FeatureConfig::default()
    };
    let s = uncond.samples();
    let picks = pair_unconditional_indices(s.len(), s.len(), 4, rng::derive(seed, stream::PAIRING)).unwrap();
    let mc = rng::derive(seed, stream::MC);
    let mut expected = Vec::new();
    for (i, refs) in picks.iter().enumerate() {
        let g = featurize_pair("", &s[i].generation, &fc);
        let per_pair: Vec<_> = refs
            .iter()
            .map(|&j| {
                let r = featurize_pair("", &s[j].reference, &fc);
                let key = format!("{}\u{1f}{}", s[i].id, s[j].id);
                score_pair(&model.params, &g, &r, 20, rng::derive_keyed(mc, &key)).unwrap()
            })
            .collect();
        let avg = |f: &dyn Fn(usize) -> f64| (0..4).map(f).sum::<f64>() / 4.0;
        expected.push((
            avg(&|k| per_pair[k].scores.p_generated),
            avg(&|k| per_pair[k].c),
            avg(&|k| per_pair[k].m),
        ));
    }
    let records = report["records"].as_array().unwrap();
    for (rec, (p, _, _)) in records.iter().zip(&expected) {
        assert!((rec["p_generated"].as_f64().unwrap() - p).abs() <= 1e-12);
    }
    let (p_sys, _) = system_score(&expected, WeightMode::Literal).unwrap();
    assert!((report["p_sys"].as_f64().unwrap() - p_sys).abs() <= 1e-12);
}

#[test]
fn synth_round_trips_and_rejects_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    run_ok(&["synth", "--out", out, "--seed", "3", "--set", "synth.n=12"]);
    let loaded = load_jsonl(dir.path().join("synthetic.jsonl"), CorpusKind::Conditional).unwrap();
    assert_eq!(loaded, make_synthetic(Grammar::corrupt(0.3), 12, 3).unwrap());
    let manifest = json(dir.path().join("synthetic.manifest.json"));
    assert_eq!(manifest["samples"], 12);

    let zero = pscore(&["synth", "--out", out, "--set", "synth.n=0"]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn perturb_level_zero_copies_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    make_synthetic(Grammar::NearGrammar, 10, 1).unwrap().save_jsonl(&input).unwrap();
    let out = dir.path().join("p");
    let input_arg = format!("perturb.input={:?}", path_str(&input));
    run_ok(&["perturb", "--out", path_str(&out), "--set", &input_arg, "--set", "perturb.level=0"]);
    assert_eq!(fs::read(out.join("perturbed.jsonl")).unwrap(), fs::read(&input).unwrap());

    run_ok(&["perturb", "--out", path_str(&out), "--set", &input_arg, "--set", "perturb.level=0.5"]);
    let before = load_jsonl(&input, CorpusKind::Conditional).unwrap();
    let after = load_jsonl(out.join("perturbed.jsonl"), CorpusKind::Conditional).unwrap();
    let mut changed = 0;
    for (a, b) in before.samples().iter().zip(after.samples()) {
        assert_eq!((&a.id, &a.context, &a.reference), (&b.id, &b.context, &b.reference));
        changed += usize::from(a.generation != b.generation);
    }
    assert!(changed > 0);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 8\n\n[synth]\nn = 7\ngrammar = \"near_grammar\"\n").unwrap();
    let out = dir.path().join("o");
    run_ok(&["synth", "--config", path_str(&cfg), "--out", path_str(&out), "--set", "synth.n=9"]);
    let loaded = load_jsonl(out.join("synthetic.jsonl"), CorpusKind::Conditional).unwrap();
    assert_eq!(loaded, make_synthetic(Grammar::NearGrammar, 9, 8).unwrap());

    let bad = pscore(&["synth", "--out", path_str(&out), "--set", "synth.m=3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_with_two_tiers_flags_degenerate_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&with_small(&[
        "bench",
        "--out",
        path_str(dir.path()),
        "--set=bench.levels=[0.0, 0.4]",
        "--set=bench.n=60",
    ]));
    let report = json(dir.path().join("bench.json"));
    for c in report["correlations"].as_array().unwrap() {
        assert_eq!(c["degenerate"], true);
        if let Some(r) = c["spearman_vs_level"].as_f64() {
            assert!((r.abs() - 1.0).abs() <= 1e-12, "{r}");
        }
    }
    assert!(String::from_utf8(out.stdout).unwrap().contains("degenerate"));
}

fn bench_default(seed: &str) -> Value {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["bench", "--out", path_str(dir.path()), "--seed", seed]);
    json(dir.path().join("bench.json"))
}

fn correlations(report: &Value) -> Vec<Option<f64>> {
    report["correlations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["spearman_vs_level"].as_f64())
        .collect()
}

#[test]
fn bench_default_orders_tiers_and_keeps_signs_across_seeds() {
    let a = bench_default("0");
    let b = bench_default("1");
    let (ca, cb) = (correlations(&a), correlations(&b));
    assert_eq!(a["correlations"][0]["metric"], "perception_score");
    assert_eq!(ca[0], Some(-1.0), "{a}");
    for (x, y) in ca.iter().zip(&cb) {
        let (x, y) = (x.expect("defined"), y.expect("defined"));
        assert_eq!(x.signum(), y.signum(), "{ca:?} vs {cb:?}");
    }
}
