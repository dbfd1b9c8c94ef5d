//! Deterministic, class-separable synthetic corpora in the on-disk corpus
//! layout.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    derive_fold_runs, write_feature, write_splits, Category, Example, FeatureStore, Modality,
    ModalityFeature, SplitSet, Taxonomy, TaxonomyEntry, TROPE_COUNT,
};
use crate::error::{Error, Result};
use crate::storyteller::{text_key, AnchorBackend};

/// Largest pairwise cosine allowed between two class anchors.
pub const MAX_ANCHOR_COSINE: f64 = 0.3;
const ANCHOR_ATTEMPTS: usize = 10_000;

pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const SPLITS_DIR: &str = "splits";
pub const FEATURES_DIR: &str = "features";
pub const ANCHORS_FILE: &str = "anchors.json";
pub const TOKENS_DIR: &str = "tokens";
pub const SPEC_FILE: &str = "synthetic.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub modality: Modality,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub examples_per_class: usize,
    pub streams: Vec<SynthStream>,
    /// Dimension of the description anchors.
    pub context_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Class separation; noise scale is `feature_noise / margin`.
    pub margin: f64,
    /// Extra multiplier on feature noise only; descriptions stay exact.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 10,
            examples_per_class: 20,
            streams: vec![
                SynthStream {
                    modality: Modality::Motion,
                    dim: 1024,
                },
                SynthStream {
                    modality: Modality::Asr,
                    dim: 768,
                },
            ],
            context_dim: 768,
            min_frames: 4,
            max_frames: 12,
            margin: 1.0,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if !(2..=TROPE_COUNT).contains(&self.n_classes) {
            return bad(format!("n_classes must be in 2..={TROPE_COUNT}"));
        }
        if self.examples_per_class == 0 {
            return bad("examples_per_class must be positive".into());
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive".into());
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be finite and >= 0".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames".into());
        }
        if self.streams.is_empty() || self.context_dim == 0 {
            return bad("need at least one stream and a positive context dim".into());
        }
        for (i, s) in self.streams.iter().enumerate() {
            if s.dim == 0 || matches!(s.modality, Modality::Description | Modality::Object) {
                return bad(format!("unsupported synthetic stream {} (dim {})", s.modality, s.dim));
            }
            if self.streams[..i].iter().any(|o| o.modality == s.modality) {
                return bad(format!("stream {} listed twice", s.modality));
            }
        }
        Ok(())
    }

    /// Per-coordinate noise scale before dividing by `sqrt(dim)`.
    pub fn noise_scale(&self) -> f64 {
        if self.margin.is_infinite() {
            0.0
        } else {
            self.feature_noise / self.margin
        }
    }

    pub fn description(class: usize) -> String {
        format!("class_{class:02}")
    }

    pub fn trope_name(class: usize) -> String {
        format!("trope_{class:02}")
    }
}

/// Paths of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLayout {
    pub root: PathBuf,
}

impl CorpusLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusLayout { root: root.into() }
    }
    pub fn taxonomy(&self) -> PathBuf {
        self.root.join(TAXONOMY_FILE)
    }
    pub fn splits(&self) -> PathBuf {
        self.root.join(SPLITS_DIR)
    }
    pub fn features(&self) -> PathBuf {
        self.root.join(FEATURES_DIR)
    }
    pub fn anchors(&self) -> PathBuf {
        self.root.join(ANCHORS_FILE)
    }
    pub fn tokens(&self) -> PathBuf {
        self.root.join(TOKENS_DIR)
    }
}

/// Unit class anchors, one row per class, in `space_dims` truncations of a
/// shared base direction. Every truncation keeps pairwise cosine below
/// `MAX_ANCHOR_COSINE`.
pub fn draw_anchors(
    n_classes: usize,
    space_dims: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<Array2<f64>>> {
    let base_dim = space_dims.iter().copied().max().unwrap_or(0);
    let mut spaces: Vec<Array2<f64>> = space_dims
        .iter()
        .map(|&d| Array2::zeros((n_classes, d)))
        .collect();
    for c in 0..n_classes {
        let mut accepted = false;
        for _ in 0..ANCHOR_ATTEMPTS {
            let base: Array1<f64> = (0..base_dim).map(|_| rng.sample(StandardNormal)).collect();
            let candidates: Option<Vec<Array1<f64>>> = space_dims
                .iter()
                .map(|&d| {
                    let v = base.slice(ndarray::s![..d]).to_owned();
                    let norm = v.dot(&v).sqrt();
                    (norm > 0.0).then(|| v / norm)
                })
                .collect();
            let Some(candidates) = candidates else { continue };
            let ok = spaces.iter().zip(&candidates).all(|(space, v)| {
                (0..c).all(|o| space.row(o).dot(v) < MAX_ANCHOR_COSINE)
            });
            if ok {
                for (space, v) in spaces.iter_mut().zip(candidates) {
                    space.row_mut(c).assign(&v);
                }
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Invalid(format!(
                "dimensions {space_dims:?} too small for {n_classes} anchors with cosine < {MAX_ANCHOR_COSINE}"
            )));
        }
    }
    Ok(spaces)
}

fn round_f32(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| f64::from(v as f32))
}

/// Everything the generator produced, already in memory.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub layout: CorpusLayout,
    pub taxonomy: Taxonomy,
    pub splits: SplitSet,
    /// Description anchors, one row per class, as stored on disk.
    pub anchors: Array2<f64>,
    /// Per-stream feature anchors, as generated.
    pub stream_anchors: Vec<(Modality, Array2<f64>)>,
}

/// Writes taxonomy, derived split files, feature files (one per stream plus
/// the description tokens), the anchor table and token files under `dir`.
pub fn gen_synthetic_corpus(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let layout = CorpusLayout::new(dir.as_ref());
    std::fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut space_dims = vec![spec.context_dim];
    space_dims.extend(spec.streams.iter().map(|s| s.dim));
    let mut spaces = draw_anchors(spec.n_classes, &space_dims, &mut rng)?;
    let anchors = round_f32(&spaces.remove(0));
    let stream_anchors: Vec<(Modality, Array2<f64>)> =
        spec.streams.iter().map(|s| s.modality).zip(spaces).collect();

    let taxonomy = Taxonomy::new((0..spec.n_classes).map(|c| {
        let first = Category::ALL[rng.random_range(0..Category::ALL.len())];
        let mut categories = vec![first];
        // Class 0 is always multi-category; the rest are with probability 1/3.
        if c == 0 || rng.random_bool(1.0 / 3.0) {
            let second = Category::ALL[(first as usize + 1 + rng.random_range(0..7)) % 8];
            categories.push(second);
        }
        TaxonomyEntry {
            trope: SyntheticSpec::trope_name(c),
            categories,
        }
    }))?;

    let store = FeatureStore::new(layout.features());
    let sigma = spec.noise_scale();
    let mut examples = Vec::with_capacity(spec.n_classes * spec.examples_per_class);
    for c in 0..spec.n_classes {
        let trope_id = taxonomy
            .id_of(&SyntheticSpec::trope_name(c))
            .expect("generated trope");
        for k in 0..spec.examples_per_class {
            let video_id = format!("syn_c{c:02}_{k:04}");
            let frames = rng.random_range(spec.min_frames..=spec.max_frames);
            for (modality, space) in &stream_anchors {
                let d = space.ncols();
                let scale = sigma / (d as f64).sqrt();
                let video_noise: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let mut rows = Array2::<f32>::zeros((frames, d));
                for mut row in rows.rows_mut() {
                    for j in 0..d {
                        let frame_noise: f64 = rng.sample(StandardNormal);
                        row[j] = (space[(c, j)] + scale * (video_noise[j] + frame_noise)) as f32;
                    }
                }
                store.write(&video_id, &ModalityFeature::from_rows(*modality, &rows)?)?;
            }
            let description = anchors.row(c).mapv(|v| v as f32).insert_axis(ndarray::Axis(0));
            store.write(
                &video_id,
                &ModalityFeature::from_rows(Modality::Description, &description)?,
            )?;
            let duration = rng.random_range(5.0..200.0f64);
            examples.push(Example {
                video_id,
                trope_id,
                description: Some(SyntheticSpec::description(c)),
                asr_transcript: String::new(),
                duration_seconds: Some((duration * 100.0).round() / 100.0),
            });
        }
    }

    let backend = AnchorBackend::new(
        spec.context_dim,
        (0..spec.n_classes).map(|c| {
            (
                SyntheticSpec::description(c),
                anchors.row(c).iter().map(|&v| v as f32).collect(),
            )
        }),
    )?;
    backend.save(layout.anchors())?;
    let tokens = layout.tokens();
    std::fs::create_dir_all(&tokens).map_err(|e| Error::io(&tokens, e))?;
    for c in 0..spec.n_classes {
        let row = anchors.row(c).mapv(|v| v as f32).insert_axis(ndarray::Axis(0));
        write_feature(
            tokens.join(format!("{}.trum", text_key(&SyntheticSpec::description(c)))),
            &ModalityFeature::from_rows(Modality::Description, &row)?,
        )?;
    }

    taxonomy.save(layout.taxonomy())?;
    let folds = derive_fold_runs(&examples, spec.seed)?;
    let splits = SplitSet { examples, folds };
    write_splits(layout.splits(), &splits, &taxonomy)?;
    let spec_path = layout.root.join(SPEC_FILE);
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;

    Ok(SyntheticCorpus {
        layout,
        taxonomy,
        splits,
        anchors,
        stream_anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_are_unit_and_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spaces = draw_anchors(10, &[64, 32], &mut rng).unwrap();
        for space in &spaces {
            for i in 0..10 {
                assert!((space.row(i).dot(&space.row(i)) - 1.0).abs() < 1e-12);
                for j in 0..i {
                    assert!(space.row(i).dot(&space.row(j)) < MAX_ANCHOR_COSINE);
                }
            }
        }
    }

    #[test]
    fn too_small_dims_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_anchors(40, &[2], &mut rng).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = SyntheticSpec::default();
        s.validate().unwrap();
        s.margin = 0.0;
        assert!(s.validate().is_err());
        s.margin = f64::INFINITY;
        s.validate().unwrap();
        assert_eq!(s.noise_scale(), 0.0);
        s.n_classes = 1;
        assert!(s.validate().is_err());
    }
}
