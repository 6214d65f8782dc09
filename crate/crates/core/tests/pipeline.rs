use perception_core::checkpoint;
use perception_core::corpus::{make_synthetic, pair_unconditional_indices, split, Corpus, CorpusKind, Grammar, Sample};
use perception_core::featurizer::{featurize_pair, FeatureConfig};
use perception_core::perception::{evaluate_system, score_pair, train, EvalOptions, Hyperparams, TrainedModel};
use perception_core::rng::{self, stream};
use perception_core::tinynet::{self, Mode};
use perception_core::uncertainty::system_score;
use perception_core::Error;
use rand::seq::SliceRandom;

fn small() -> (FeatureConfig, Hyperparams) {
    let features = FeatureConfig {
        dim_per_segment: 64,
        ..FeatureConfig::default()
    };
    let hyper = Hyperparams {
        epochs: 3,
        hidden_dims: vec![16, 8],
        ..Hyperparams::default()
    };
    (features, hyper)
}

fn small_model(seed: u64) -> (TrainedModel, Corpus) {
    let (features, hyper) = small();
    let corpus = make_synthetic(Grammar::corrupt(0.3), 60, seed).unwrap();
    let (tr, dev, te) = split(&corpus, 0.7, 0.1, seed).unwrap();
    (train(&tr, &dev, &features, &hyper, seed).unwrap(), te)
}

fn dev_mean_p_reference(model: &TrainedModel, dev: &Corpus) -> f64 {
    let sum: f64 = dev
        .samples()
        .iter()
        .map(|s| {
            let g = featurize_pair(&s.context, &s.generation, &model.feature_config);
            let r = featurize_pair(&s.context, &s.reference, &model.feature_config);
            let t = tinynet::forward_pair(&model.params, &g, &r, Mode::Eval, 0).unwrap();
            1.0 / (1.0 + (t.raw_score_gen - t.raw_score_ref).exp())
        })
        .sum();
    sum / dev.len() as f64
}

#[test]
fn identical_generations_stay_near_one_half() {
    let corpus = make_synthetic(Grammar::RefGrammar, 200, 4).unwrap();
    let (tr, dev, _) = split(&corpus, 0.7, 0.1, 4).unwrap();
    let features = FeatureConfig::default();
    let model = train(&tr, &dev, &features, &Hyperparams::default(), 4).unwrap();
    let p = dev_mean_p_reference(&model, &dev);
    assert!((0.45..=0.55).contains(&p), "{p}");
}

#[test]
fn single_sample_report_has_unit_weight() {
    let (model, te) = small_model(1);
    let one = Corpus::new(vec![te.samples()[0].clone()], te.kind()).unwrap();
    let r = evaluate_system(&model, &one, &model.feature_config, &EvalOptions::default(), 9).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.records[0].w, 1.0);
    assert_eq!(r.p_sys, r.records[0].p_generated);
}

#[test]
fn shuffled_test_set_gives_same_system_score() {
    let (model, te) = small_model(2);
    let opts = EvalOptions::default();
    let a = evaluate_system(&model, &te, &model.feature_config, &opts, 5).unwrap();
    let mut samples = te.samples().to_vec();
    samples.shuffle(&mut rng::rng_from(77));
    let shuffled = Corpus::new(samples, te.kind()).unwrap();
    let b = evaluate_system(&model, &shuffled, &model.feature_config, &opts, 5).unwrap();
    assert!((a.p_sys - b.p_sys).abs() <= 1e-12, "{} vs {}", a.p_sys, b.p_sys);
}

#[test]
fn mismatched_feature_config_is_a_compatibility_error() {
    let (model, te) = small_model(3);
    let other = FeatureConfig {
        hash_seed: 1,
        ..model.feature_config.clone()
    };
    let err = evaluate_system(&model, &te, &other, &EvalOptions::default(), 0).unwrap_err();
    assert!(matches!(err, Error::Compatibility(_)), "{err}");
}

#[test]
fn checkpoint_round_trip_reproduces_report() {
    let (model, te) = small_model(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    checkpoint::save(&model, &path).unwrap();
    let back = checkpoint::load(&path, Some(&model.feature_config)).unwrap();
    let opts = EvalOptions::default();
    let a = evaluate_system(&model, &te, &model.feature_config, &opts, 6).unwrap();
    let b = evaluate_system(&back, &te, &back.feature_config, &opts, 6).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unconditional_scores_average_four_references() {
    let (model, te) = small_model(5);
    let samples: Vec<Sample> = te
        .samples()
        .iter()
        .map(|s| Sample {
            context: String::new(),
            ..s.clone()
        })
        .collect();
    let corpus = Corpus::new(samples, CorpusKind::Unconditional).unwrap();
    let opts = EvalOptions::default();
    let seed = 13;
    let report = evaluate_system(&model, &corpus, &model.feature_config, &opts, seed).unwrap();

    let s = corpus.samples();
    let picks = pair_unconditional_indices(s.len(), s.len(), 4, rng::derive(seed, stream::PAIRING)).unwrap();
    let mc_base = rng::derive(seed, stream::MC);
    let mut expected = Vec::new();
    for (i, refs) in picks.iter().enumerate() {
        assert_eq!(refs.len(), 4);
        let g = featurize_pair("", &s[i].generation, &model.feature_config);
        let (mut p, mut c, mut m) = (0.0, 0.0, 0.0);
        for &j in refs {
            let r = featurize_pair("", &s[j].reference, &model.feature_config);
            let key = format!("{}\u{1f}{}", s[i].id, s[j].id);
            let e = score_pair(&model.params, &g, &r, opts.mc_passes, rng::derive_keyed(mc_base, &key)).unwrap();
            p += e.scores.p_generated;
            c += e.c;
            m += e.m;
        }
        expected.push((p / 4.0, c / 4.0, m / 4.0));
    }
    for (rec, &(p, c, m)) in report.records.iter().zip(&expected) {
        assert!((rec.p_generated - p).abs() <= 1e-12);
        assert!((rec.c - c).abs() <= 1e-12);
        assert!((rec.m - m).abs() <= 1e-12);
    }
    let (p_sys, _) = system_score(&expected, opts.weight_mode).unwrap();
    assert!((report.p_sys - p_sys).abs() <= 1e-12);
}

#[test]
fn more_corruption_scores_strictly_lower() {
    let seed = 3;
    let features = FeatureConfig::default();
    let hyper = Hyperparams::default();
    let mut scores = Vec::new();
    for level in [0.0, 0.1, 0.2, 0.3, 0.4] {
        let corpus = make_synthetic(Grammar::corrupt(level), 400, seed).unwrap();
        let (tr, dev, te) = split(&corpus, 0.7, 0.1, seed).unwrap();
        let model = train(&tr, &dev, &features, &hyper, seed).unwrap();
        scores.push(evaluate_system(&model, &te, &features, &EvalOptions::default(), seed).unwrap().p_sys);
    }
    assert!(scores.windows(2).all(|w| w[1] < w[0]), "{scores:?}");
}
