//! Module behaviour checked against independent reference computations.

mod common;

use std::collections::{BTreeMap, HashSet};

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use trope_core::config::Mode;
use trope_core::corpus::{
    load_splits, Category, Example, FeatureStore, FoldRun, Modality, SplitSet, Taxonomy, TaxonomyEntry,
};
use trope_core::eval::{per_category_accuracy, report_from_predictions};
use trope_core::humaneval::sample_questions;
use trope_core::stats::{category_stats, length_buckets, multi_category_fraction, StatsMode};
use trope_core::storyteller::{AnchorBackend, ContextualBackend, PooledTokenBackend, TokenPooling};
use trope_core::synth::{gen_synthetic_corpus, CorpusLayout, SyntheticSpec};
use trope_core::train::{fit, load_samples};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + b.abs())
}

#[test]
fn category_stats_match_brute_force() {
    let mut r = rng(50);
    let tax = random_taxonomy(&mut r, 12);
    let examples = random_examples(&mut r, &tax, 50);
    let rows = category_stats(&examples, &tax, StatsMode::PerExample).unwrap();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        let values = oracle_category_durations(&examples, &tax, row.category);
        match (oracle_summary(&values), &row.durations) {
            (None, None) => {}
            (Some(o), Some(d)) => {
                assert_eq!(o.count, d.count);
                assert!(close(d.mean, o.mean));
                assert!(close(d.median, o.median));
                assert_eq!((d.min, d.max), (o.min, o.max));
                assert!(close(d.std_population, o.var_population.sqrt()));
                assert!(close(d.std_sample, o.var_sample.sqrt()));
            }
            other => panic!("row {:?}: {other:?}", row.category),
        }
        let tropes = match row.category {
            None => tax.len(),
            Some(c) => tax.tropes().iter().filter(|t| t.categories.contains(&c)).count(),
        };
        assert_eq!(row.trope_count, tropes);
    }
}

#[test]
fn per_trope_mean_mode() {
    let mut r = rng(51);
    let tax = random_taxonomy(&mut r, 9);
    let examples = random_examples(&mut r, &tax, 80);
    let rows = category_stats(&examples, &tax, StatsMode::PerTropeMean).unwrap();
    let all = rows.last().unwrap().durations.clone().unwrap();
    let mut means = Vec::new();
    for t in 0..tax.len() {
        let d: Vec<f64> = examples
            .iter()
            .filter(|e| e.trope_id == t)
            .map(|e| e.duration_seconds.unwrap())
            .collect();
        if !d.is_empty() {
            means.push(d.iter().sum::<f64>() / d.len() as f64);
        }
    }
    let o = oracle_summary(&means).unwrap();
    assert_eq!(all.count, o.count);
    assert!(close(all.mean, o.mean));
    assert!(close(all.median, o.median));
}

#[test]
fn buckets_and_multi_fraction_match_brute_force() {
    let mut r = rng(52);
    for n_tropes in [5, 17, 132] {
        let tax = random_taxonomy(&mut r, n_tropes);
        let examples = random_examples(&mut r, &tax, 200);
        let b = length_buckets(&examples).unwrap();
        assert_eq!((b.short_count, b.median_count, b.long_count), oracle_buckets(&examples));
        assert!(close(multi_category_fraction(&tax), oracle_multi_fraction(&tax)));
    }
}

#[test]
fn boundary_durations_land_in_the_middle() {
    let tax = Taxonomy::new([TaxonomyEntry {
        trope: "t".into(),
        categories: vec![Category::Audio],
    }])
    .unwrap();
    let examples: Vec<Example> = [19.999, 20.0, 120.0, 120.001]
        .iter()
        .enumerate()
        .map(|(i, &d)| Example {
            video_id: format!("v{i}"),
            trope_id: 0,
            description: None,
            asr_transcript: String::new(),
            duration_seconds: Some(d),
        })
        .collect();
    let b = length_buckets(&examples).unwrap();
    assert_eq!((b.short_count, b.median_count, b.long_count), (1, 2, 1));
    assert!(category_stats(&examples, &tax, StatsMode::PerExample).is_ok());
}

#[test]
fn per_category_accuracy_matches_double_loop() {
    let mut r = rng(53);
    for _ in 0..100 {
        let n_tropes = r.random_range(2..40);
        let tax = random_taxonomy(&mut r, n_tropes);
        let n = r.random_range(1..120);
        let examples = random_examples(&mut r, &tax, n);
        let predictions: BTreeMap<String, usize> = examples
            .iter()
            .map(|e| {
                let p = if r.random_bool(0.4) { e.trope_id } else { r.random_range(0..n_tropes) };
                (e.video_id.clone(), p)
            })
            .collect();
        let got = per_category_accuracy(&predictions, &examples, &tax).unwrap();
        let want = oracle_per_category(&predictions, &examples, &tax);
        for c in Category::ALL {
            assert_eq!((got[&c].correct, got[&c].count), want[&c]);
        }
    }
}

#[test]
fn overall_is_weighted_combination_of_a_partition() {
    let mut r = rng(54);
    let tax = Taxonomy::new((0..16).map(|i| TaxonomyEntry {
        trope: format!("t{i:02}"),
        categories: vec![Category::ALL[i % 8]],
    }))
    .unwrap();
    let examples = random_examples(&mut r, &tax, 300);
    let predictions: BTreeMap<String, usize> = examples
        .iter()
        .map(|e| (e.video_id.clone(), if r.random_bool(0.3) { e.trope_id } else { 0 }))
        .collect();
    let report = report_from_predictions(predictions, &examples, &tax).unwrap();
    let weighted: f64 = report
        .per_category
        .values()
        .map(|a| a.accuracy().unwrap_or(0.0) * a.count as f64)
        .sum::<f64>()
        / report.total as f64;
    assert!((weighted - report.accuracy).abs() < 1e-12);
}

#[test]
fn uniform_random_predictions_are_near_chance() {
    let mut r = rng(55);
    let tax = random_taxonomy(&mut r, 132);
    let examples = random_examples(&mut r, &tax, 20_000);
    let predictions = examples
        .iter()
        .map(|e| (e.video_id.clone(), r.random_range(0..132)))
        .collect();
    let report = report_from_predictions(predictions, &examples, &tax).unwrap();
    let p = 1.0 / 132.0;
    let sigma = (p * (1.0 - p) / 20_000.0f64).sqrt();
    assert!((report.accuracy - p).abs() < 3.0 * sigma, "{}", report.accuracy);

    let perfect = examples.iter().map(|e| (e.video_id.clone(), e.trope_id)).collect();
    let report = report_from_predictions(perfect, &examples, &tax).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert!(report
        .per_category
        .values()
        .all(|a| a.count == 0 || a.accuracy() == Some(1.0)));
}

#[test]
fn synthetic_splits_are_disjoint_and_cover_every_id_once() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_synthetic_corpus(&small_spec(7), dir.path()).unwrap();
    let tax = Taxonomy::load(corpus.layout.taxonomy()).unwrap();
    let loaded = load_splits(corpus.layout.splits(), &tax).unwrap();
    assert_eq!(loaded.examples.len(), 200);
    assert_eq!(loaded.folds, corpus.splits.folds);
    let ids: Vec<&str> = loaded.examples.iter().map(|e| e.video_id.as_str()).collect();
    for f in &loaded.folds {
        assert_eq!((f.train.len(), f.val.len(), f.test.len()), (140, 20, 40));
        for (a, b) in [(&f.train, &f.val), (&f.train, &f.test), (&f.val, &f.test)] {
            for x in a.iter() {
                for y in b.iter() {
                    assert_ne!(x, y);
                }
            }
        }
    }
    for id in ids {
        let hits = loaded
            .folds
            .iter()
            .filter(|f| f.test.iter().any(|t| t == id))
            .count();
        assert_eq!(hits, 1, "{id}");
    }
}

#[test]
fn synthetic_generation_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut spec = small_spec(3);
    spec.examples_per_class = 3;
    gen_synthetic_corpus(&spec, a.path()).unwrap();
    gen_synthetic_corpus(&spec, b.path()).unwrap();
    let mut files = Vec::new();
    let mut stack = vec![a.path().to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    assert!(files.len() > 60);
    for f in files {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
    }
}

fn stream_sequences(corpus: &trope_core::synth::SyntheticCorpus, modality: Modality, dim: usize) -> Vec<(ndarray::Array2<f64>, usize)> {
    let store = FeatureStore::new(corpus.layout.features()).with_dim(modality, dim);
    corpus
        .splits
        .examples
        .iter()
        .map(|e| {
            let class: usize = e.description.as_ref().unwrap()["class_".len()..].parse().unwrap();
            (store.load_feature(&e.video_id, modality).unwrap().to_sequence(), class)
        })
        .collect()
}

#[test]
fn nearest_anchor_accuracy_falls_with_noise() {
    let mut accs = Vec::new();
    for margin in [f64::INFINITY, 0.5, 0.15] {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec(21);
        spec.margin = margin;
        let corpus = gen_synthetic_corpus(&spec, dir.path()).unwrap();
        let anchors = &corpus.stream_anchors[0].1;
        accs.push(nearest_anchor_accuracy(
            &stream_sequences(&corpus, Modality::Motion, SYN_MOTION_DIM),
            anchors,
        ));
    }
    assert_eq!(accs[0], 1.0);
    assert!(accs[0] >= accs[1] && accs[1] >= accs[2], "{accs:?}");
    assert!(accs[2] < 1.0, "{accs:?}");
}

#[test]
fn stub_backend_returns_stored_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_synthetic_corpus(&small_spec(7), dir.path()).unwrap();
    let stub = AnchorBackend::load(corpus.layout.anchors()).unwrap();
    let c7 = stub.embed(&SyntheticSpec::description(7)).unwrap();
    assert_eq!(c7.0, corpus.anchors.row(7));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(corpus.layout.anchors()).unwrap()).unwrap();
    let stored = json["anchors"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["text"] == "class_07")
        .unwrap()["vector"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap() as f32 as f64)
        .collect::<Vec<_>>();
    assert_eq!(c7.0.to_vec(), stored);

    let pooled = PooledTokenBackend::open(corpus.layout.tokens(), SYN_CONTEXT_DIM, TokenPooling::Mean).unwrap();
    assert_eq!(pooled.embed("class_07").unwrap().0, c7.0);
    assert!(stub.embed("class_99").is_err());
}

#[test]
fn generated_features_pass_validation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_synthetic_corpus(&small_spec(8), dir.path()).unwrap();
    let store = FeatureStore::new(corpus.layout.features())
        .with_dim(Modality::Motion, SYN_MOTION_DIM)
        .with_dim(Modality::Asr, SYN_ASR_DIM)
        .with_dim(Modality::Description, SYN_CONTEXT_DIM);
    for e in &corpus.splits.examples {
        for m in [Modality::Motion, Modality::Asr, Modality::Description] {
            store.load_feature(&e.video_id, m).unwrap();
        }
    }
}

/// Writes split files with the given test-set sizes over `sizes.sum()` ids.
fn fixture_with_test_sizes(dir: &std::path::Path, sizes: &[usize]) -> Taxonomy {
    let mut r = rng(60);
    let tax = random_taxonomy(&mut r, 132);
    let total: usize = sizes.iter().sum();
    let examples = random_examples(&mut r, &tax, total);
    let mut ids: Vec<String> = examples.iter().map(|e| e.video_id.clone()).collect();
    ids.shuffle(&mut r);
    let mut folds = Vec::new();
    let mut start = 0;
    for (i, &n) in sizes.iter().enumerate() {
        let test: Vec<String> = ids[start..start + n].to_vec();
        let rest: Vec<String> = ids.iter().filter(|id| !test.contains(id)).cloned().collect();
        let n_val = rest.len() / 8;
        folds.push(FoldRun {
            fold_index: i,
            val: rest[..n_val].to_vec(),
            train: rest[n_val..].to_vec(),
            test,
        });
        start += n;
    }
    trope_core::corpus::write_splits(dir, &SplitSet { examples, folds }, &tax).unwrap();
    tax
}

#[test]
fn load_splits_reports_released_fold_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let sizes = [495, 487, 478, 483, 480];
    let tax = fixture_with_test_sizes(dir.path(), &sizes);
    let set = load_splits(dir.path(), &tax).unwrap();
    let got: Vec<usize> = set.folds.iter().map(|f| f.test.len()).collect();
    assert_eq!(got, sizes);
    assert_eq!(got.iter().sum::<usize>(), 2423);
    assert_eq!(set.examples.len(), 2423);
}

#[test]
fn humaneval_on_full_size_taxonomy() {
    let mut r = rng(61);
    let tax = random_taxonomy(&mut r, 132);
    assert!(tax.is_full());
    let examples = random_examples(&mut r, &tax, 500);
    let set = sample_questions(&examples, &tax, 100, 5).unwrap();
    assert_eq!(set.questions.len(), 100);
    assert!(set.shortfalls.is_empty());
    for q in &set.questions {
        assert_eq!(q.options.iter().collect::<HashSet<_>>().len(), 5);
        let answer = &tax.tropes()[q.answer()];
        let same = q
            .options
            .iter()
            .filter(|&&o| o != answer.id && tax.tropes()[o].shares_category(answer))
            .count();
        assert!(same >= 2);
    }
}

#[test]
fn humaneval_records_shortfall() {
    // The lone audio trope has no same-category peers.
    let mut entries = vec![TaxonomyEntry {
        trope: "solo".into(),
        categories: vec![Category::Audio],
    }];
    entries.extend((0..6).map(|i| TaxonomyEntry {
        trope: format!("s{i}"),
        categories: vec![Category::Sentiment],
    }));
    let tax = Taxonomy::new(entries).unwrap();
    let solo = tax.id_of("solo").unwrap();
    let examples = vec![Example {
        video_id: "v".into(),
        trope_id: solo,
        description: None,
        asr_transcript: String::new(),
        duration_seconds: None,
    }];
    let set = sample_questions(&examples, &tax, 1, 0).unwrap();
    assert_eq!(set.shortfalls.len(), 1);
    assert_eq!(set.shortfalls[0].same_category, 0);
    assert_eq!(set.questions[0].options.iter().collect::<HashSet<_>>().len(), 5);
}

#[test]
fn backend_checksum_is_stable_across_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(9);
    spec.examples_per_class = 5;
    let corpus = gen_synthetic_corpus(&spec, dir.path()).unwrap();
    let mut config = small_config(Mode::TrustFull, 0);
    config.max_epochs = 3;
    let layout = CorpusLayout::new(dir.path());
    let backend = AnchorBackend::load(layout.anchors()).unwrap();
    let before = backend.checksum();
    let samples = load_samples(
        &corpus.splits.examples,
        &FeatureStore::new(layout.features()),
        &config,
        Some(&backend),
    )
    .unwrap();
    fit(&corpus.splits.folds[0], &samples, &config, corpus.taxonomy.len(), &mut |_| {}).unwrap();
    assert_eq!(backend.checksum(), before);
    assert_eq!(AnchorBackend::load(layout.anchors()).unwrap().checksum(), before);
}
