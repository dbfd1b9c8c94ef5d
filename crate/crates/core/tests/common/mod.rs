//! Fixtures and straight-line reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trope_core::config::{ExperimentConfig, Mode, StoryInput};
use trope_core::corpus::{Category, Example, Modality, Taxonomy, TaxonomyEntry};
use trope_core::encoder::StreamSpec;
use trope_core::model::{Sample, TrustModel};
use trope_core::nn::{Activation, Parameterized};
use trope_core::synth::{SynthStream, SyntheticSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- configs

/// Tiny shapes for finite-difference checks.
pub fn toy_config(mode: Mode, activation: Activation, story_input: StoryInput) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        mode,
        activation,
        story_input,
        alpha: 0.7,
        beta: 1.3,
        storyteller_hidden: 6,
        classifier_hidden: 7,
        streams: vec![
            StreamSpec::new(Modality::Motion, 5, 4),
            StreamSpec::new(Modality::Asr, 3, 3),
        ],
        ..ExperimentConfig::default()
    };
    c.context.dim = 6;
    if mode == Mode::Oracle {
        let streams = c.streams.clone();
        c = c.with_mode(Mode::Oracle, &streams);
        c.streams[0].hidden_dim = 5;
    }
    c.validate().unwrap();
    c
}

/// Random samples shaped for `config`, with varying sequence lengths.
pub fn toy_samples(config: &ExperimentConfig, n_tropes: usize, n: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let streams = config
                .streams
                .iter()
                .map(|s| {
                    let t = r.random_range(1..=4);
                    Array2::from_shape_fn((t, s.input_dim), |_| r.random_range(-1.0..1.0))
                })
                .collect();
            let context = config
                .mode
                .has_storyteller()
                .then(|| Array1::from_shape_fn(config.context.dim, |_| r.random_range(-1.0..1.0)));
            Sample {
                video_id: format!("toy{i}"),
                trope_id: r.random_range(0..n_tropes),
                streams,
                context,
            }
        })
        .collect()
}

/// Synthetic corpus shapes small enough for quick cross-validation.
pub const SYN_MOTION_DIM: usize = 64;
pub const SYN_ASR_DIM: usize = 48;
pub const SYN_CONTEXT_DIM: usize = 32;

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_classes: 10,
        examples_per_class: 20,
        streams: vec![
            SynthStream {
                modality: Modality::Motion,
                dim: SYN_MOTION_DIM,
            },
            SynthStream {
                modality: Modality::Asr,
                dim: SYN_ASR_DIM,
            },
        ],
        context_dim: SYN_CONTEXT_DIM,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Training settings matched to `small_spec` corpora.
pub fn small_config(mode: Mode, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        mode: Mode::TrustFull,
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 50,
        patience: 10,
        seed,
        storyteller_hidden: 32,
        classifier_hidden: 32,
        streams: vec![
            StreamSpec::new(Modality::Motion, SYN_MOTION_DIM, 16),
            StreamSpec::new(Modality::Asr, SYN_ASR_DIM, 16),
        ],
        ..ExperimentConfig::default()
    };
    c.context.dim = SYN_CONTEXT_DIM;
    let streams = c.streams.clone();
    c = c.with_mode(mode, &streams);
    c.validate().unwrap();
    c
}

// ---------------------------------------------------------- gradient check

/// Central finite differences of `f` with respect to every parameter.
/// Returns `(block name, numeric gradient)` in block order.
pub fn numeric_gradient(
    model: &TrustModel,
    step: f64,
    f: &dyn Fn(&TrustModel) -> f64,
) -> Vec<(String, Vec<f64>)> {
    let mut probe = model.clone();
    let layout: Vec<(String, usize)> = model
        .blocks("")
        .iter()
        .map(|b| (b.name.clone(), b.data.len()))
        .collect();
    let mut out = Vec::new();
    for (bi, (name, len)) in layout.into_iter().enumerate() {
        let mut g = vec![0.0; len];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = probe.blocks("")[bi].data[j];
            probe.blocks_mut("")[bi].data[j] = orig + step;
            let plus = f(&probe);
            probe.blocks_mut("")[bi].data[j] = orig - step;
            let minus = f(&probe);
            probe.blocks_mut("")[bi].data[j] = orig;
            *gj = (plus - minus) / (2.0 * step);
        }
        out.push((name, g));
    }
    out
}

/// Largest relative error between analytic and numeric gradients over one
/// block. Entries where both are below `floor` count as exact.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < floor {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------- taxonomies

pub fn random_taxonomy(r: &mut impl Rng, n_tropes: usize) -> Taxonomy {
    Taxonomy::new((0..n_tropes).map(|i| {
        let k = r.random_range(1..=3);
        let mut cats: Vec<Category> = Vec::new();
        while cats.len() < k {
            let c = Category::ALL[r.random_range(0..8)];
            if !cats.contains(&c) {
                cats.push(c);
            }
        }
        TaxonomyEntry {
            trope: format!("t{i:03}"),
            categories: cats,
        }
    }))
    .unwrap()
}

pub fn random_examples(r: &mut impl Rng, taxonomy: &Taxonomy, n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example {
            video_id: format!("e{i:05}"),
            trope_id: r.random_range(0..taxonomy.len()),
            description: Some(format!("d{i}")),
            asr_transcript: String::new(),
            duration_seconds: Some(r.random_range(1.0..300.0)),
        })
        .collect()
}

// ----------------------------------------------------------------- oracles

/// Direct mean, sorted-list median and two-pass variances.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub var_population: f64,
    pub var_sample: f64,
}

pub fn oracle_summary(values: &[f64]) -> Option<OracleSummary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    // Insertion sort keeps this independent of the library's sort.
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let n = v.len();
    let mut total = 0.0;
    for x in &v {
        total += x;
    }
    let mean = total / n as f64;
    let mut ss = 0.0;
    for x in &v {
        ss += (x - mean) * (x - mean);
    }
    let median = if n % 2 == 0 {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    } else {
        v[(n - 1) / 2]
    };
    Some(OracleSummary {
        count: n,
        mean,
        median,
        min: v[0],
        max: v[n - 1],
        var_population: ss / n as f64,
        var_sample: if n > 1 { ss / (n as f64 - 1.0) } else { 0.0 },
    })
}

/// Per-example durations of every example whose trope is in `category`
/// (`None` for all examples).
pub fn oracle_category_durations(
    examples: &[Example],
    taxonomy: &Taxonomy,
    category: Option<Category>,
) -> Vec<f64> {
    let mut out = Vec::new();
    for e in examples {
        let label = &taxonomy.tropes()[e.trope_id];
        let keep = match category {
            None => true,
            Some(c) => label.categories.iter().any(|x| *x == c),
        };
        if keep {
            out.push(e.duration_seconds.unwrap());
        }
    }
    out
}

/// `(short, middle, long)` counts with thresholds 20 and 120 seconds.
pub fn oracle_buckets(examples: &[Example]) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for e in examples {
        let d = e.duration_seconds.unwrap();
        if d < 20.0 {
            counts.0 += 1;
        } else if d <= 120.0 {
            counts.1 += 1;
        } else {
            counts.2 += 1;
        }
    }
    counts
}

pub fn oracle_multi_fraction(taxonomy: &Taxonomy) -> f64 {
    let mut multi = 0;
    for t in taxonomy.tropes() {
        if t.categories.len() > 1 {
            multi += 1;
        }
    }
    multi as f64 / taxonomy.len() as f64
}

/// Explicit double loop: for each category, scan every example.
pub fn oracle_per_category(
    predictions: &BTreeMap<String, usize>,
    examples: &[Example],
    taxonomy: &Taxonomy,
) -> BTreeMap<Category, (usize, usize)> {
    let mut out = BTreeMap::new();
    for c in Category::ALL {
        let (mut correct, mut count) = (0, 0);
        for e in examples {
            let mut member = false;
            for x in &taxonomy.tropes()[e.trope_id].categories {
                if *x == c {
                    member = true;
                }
            }
            if member {
                count += 1;
                if predictions[&e.video_id] == e.trope_id {
                    correct += 1;
                }
            }
        }
        out.insert(c, (correct, count));
    }
    out
}

/// Nearest-anchor accuracy of stream-mean features.
pub fn nearest_anchor_accuracy(sequences: &[(Array2<f64>, usize)], anchors: &Array2<f64>) -> f64 {
    let mut correct = 0;
    for (seq, class) in sequences {
        let mean = seq.mean_axis(ndarray::Axis(0)).unwrap();
        let mut best = (f64::INFINITY, usize::MAX);
        for (c, a) in anchors.rows().into_iter().enumerate() {
            let d: f64 = mean.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        if best.1 == *class {
            correct += 1;
        }
    }
    correct as f64 / sequences.len() as f64
}
