//! Python bindings: configs, synthetic corpora, training, evaluation and
//! the loss functions.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array1;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use trope_core::config::{ExperimentConfig, Mode};
use trope_core::corpus::{load_splits, FeatureStore, SplitKind, SplitSet, Taxonomy};
use trope_core::eval::{crossval_summary, evaluate_split, EvalReport, StdKind};
use trope_core::head::{total_loss, trope_loss, LossWeights, TropeDistribution};
use trope_core::humaneval::sample_questions;
use trope_core::storyteller::{story_loss, ContextEmbedding, StoryEmbedding};
use trope_core::synth::{gen_synthetic_corpus, CorpusLayout, SynthStream, SyntheticSpec};
use trope_core::train::{fit, load_samples, Checkpoint};
use trope_core::Modality;

fn to_py(e: trope_core::Error) -> PyErr {
    match e {
        trope_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(format!("[{}] {other}", other.category())),
    }
}

/// Experiment settings.
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        PyConfig {
            inner: ExperimentConfig::default(),
        }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ExperimentConfig::load(path).map(|inner| PyConfig { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: ExperimentConfig =
            toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Copy retargeted to another mode.
    fn with_mode(&self, mode: &str) -> PyResult<Self> {
        let mode = Mode::parse(mode).ok_or_else(|| PyValueError::new_err(format!("unknown mode {mode:?}")))?;
        let streams = self.inner.streams.clone();
        Ok(PyConfig {
            inner: self.inner.with_mode(mode, &streams),
        })
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(mode={:?}, seed={})", self.inner.mode.name(), self.inner.seed)
    }
}

/// Loaded taxonomy and split files of a corpus directory.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    root: PathBuf,
    features: PathBuf,
    taxonomy: Taxonomy,
    splits: SplitSet,
}

#[pymethods]
impl PyCorpus {
    #[new]
    #[pyo3(signature = (root, features=None))]
    fn new(root: PathBuf, features: Option<PathBuf>) -> PyResult<Self> {
        let layout = CorpusLayout::new(&root);
        let taxonomy = Taxonomy::load(layout.taxonomy()).map_err(to_py)?;
        let splits = load_splits(layout.splits(), &taxonomy).map_err(to_py)?;
        Ok(PyCorpus {
            features: features.unwrap_or_else(|| layout.features()),
            root,
            taxonomy,
            splits,
        })
    }

    fn __len__(&self) -> usize {
        self.splits.examples.len()
    }

    fn tropes(&self) -> Vec<String> {
        self.taxonomy.tropes().iter().map(|t| t.name.clone()).collect()
    }

    /// `[(n_train, n_val, n_test)]` per fold.
    fn fold_sizes(&self) -> Vec<(usize, usize, usize)> {
        self.splits
            .folds
            .iter()
            .map(|f| (f.train.len(), f.val.len(), f.test.len()))
            .collect()
    }

    /// Trains one fold and returns the best-validation checkpoint.
    fn train(&self, py: Python<'_>, config: &PyConfig, fold: usize) -> PyResult<PyCheckpoint> {
        let run = self
            .splits
            .folds
            .get(fold)
            .ok_or_else(|| PyValueError::new_err(format!("no fold {fold}")))?;
        let config = config.inner.clone();
        py.detach(|| {
            let backend = if config.mode.has_storyteller() {
                Some(trope_core::cli::open_backend(&config, &self.root)?)
            } else {
                None
            };
            let samples = load_samples(
                &self.splits.examples,
                &FeatureStore::new(&self.features),
                &config,
                backend.as_deref(),
            )?;
            fit(run, &samples, &config, self.taxonomy.len(), &mut |_| {})
        })
        .map(|inner| PyCheckpoint { inner })
        .map_err(to_py)
    }

    /// Test-split report of `checkpoint` on `fold`.
    fn evaluate(&self, py: Python<'_>, checkpoint: &PyCheckpoint, fold: usize) -> PyResult<PyEvalReport> {
        let run = self
            .splits
            .folds
            .get(fold)
            .ok_or_else(|| PyValueError::new_err(format!("no fold {fold}")))?;
        let examples = self.splits.select(run, SplitKind::Test);
        let mut config = checkpoint.inner.config.clone();
        if config.mode.has_storyteller() {
            config.mode = Mode::Baseline;
        }
        py.detach(|| {
            let samples = load_samples(&examples, &FeatureStore::new(&self.features), &config, None)?;
            evaluate_split(&checkpoint.inner, &examples, &samples, &self.taxonomy)
        })
        .map(|inner| PyEvalReport { inner })
        .map_err(to_py)
    }

    /// Multiple-choice questions as `(video_id, options, answer_position)`.
    #[pyo3(signature = (n=100, seed=0))]
    fn sample_humaneval(&self, n: usize, seed: u64) -> PyResult<Vec<(String, Vec<String>, usize)>> {
        let set = sample_questions(&self.splits.examples, &self.taxonomy, n, seed).map_err(to_py)?;
        Ok(set
            .questions
            .iter()
            .map(|q| {
                let names = q.options.iter().map(|&o| self.taxonomy.tropes()[o].name.clone()).collect();
                (q.video_id.clone(), names, q.answer_position)
            })
            .collect())
    }
}

#[pyclass(name = "Checkpoint")]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Checkpoint::load(path).map(|inner| PyCheckpoint { inner }).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn best_val_accuracy(&self) -> f64 {
        self.inner.best_val_accuracy
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig {
            inner: self.inner.config.clone(),
        }
    }
}

#[pyclass(name = "EvalReport")]
struct PyEvalReport {
    inner: EvalReport,
}

#[pymethods]
impl PyEvalReport {
    #[getter]
    fn accuracy(&self) -> f64 {
        self.inner.accuracy
    }

    #[getter]
    fn correct(&self) -> usize {
        self.inner.correct
    }

    #[getter]
    fn total(&self) -> usize {
        self.inner.total
    }

    /// Category name to accuracy; `None` for categories without examples.
    fn per_category(&self) -> BTreeMap<String, Option<f64>> {
        self.inner
            .per_category
            .iter()
            .map(|(c, a)| (c.name().to_string(), a.accuracy()))
            .collect()
    }

    fn predictions(&self) -> BTreeMap<String, usize> {
        self.inner.predictions.clone()
    }
}

/// Writes a synthetic corpus and returns its directory.
#[pyfunction]
#[pyo3(signature = (out, n_classes=10, examples_per_class=20, motion_dim=1024, asr_dim=768, context_dim=768, margin=1.0, feature_noise=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn gen_synthetic(
    out: PathBuf,
    n_classes: usize,
    examples_per_class: usize,
    motion_dim: usize,
    asr_dim: usize,
    context_dim: usize,
    margin: f64,
    feature_noise: f64,
    seed: u64,
) -> PyResult<PathBuf> {
    let spec = SyntheticSpec {
        n_classes,
        examples_per_class,
        streams: vec![
            SynthStream {
                modality: Modality::Motion,
                dim: motion_dim,
            },
            SynthStream {
                modality: Modality::Asr,
                dim: asr_dim,
            },
        ],
        context_dim,
        margin,
        feature_noise,
        seed,
        ..SyntheticSpec::default()
    };
    gen_synthetic_corpus(&spec, &out).map_err(to_py)?;
    Ok(out)
}

/// `1 - cos(s, c)`.
#[pyfunction(name = "story_loss")]
fn py_story_loss(s: Vec<f64>, c: Vec<f64>) -> PyResult<f64> {
    story_loss(
        &StoryEmbedding(Array1::from(s)),
        &ContextEmbedding(Array1::from(c)),
    )
    .map_err(to_py)
}

/// `-ln p[t_gt]` for a probability vector.
#[pyfunction(name = "trope_loss")]
fn py_trope_loss(t_gt: usize, probs: Vec<f64>) -> PyResult<f64> {
    trope_loss(t_gt, &TropeDistribution(Array1::from(probs))).map_err(to_py)
}

#[pyfunction(name = "total_loss")]
#[pyo3(signature = (story, trope, alpha=1.0, beta=1.0))]
fn py_total_loss(story: f64, trope: f64, alpha: f64, beta: f64) -> PyResult<f64> {
    let w = LossWeights::new(alpha, beta).map_err(to_py)?;
    Ok(total_loss(story, trope, w))
}

/// `(mean, std)` of five fold accuracies.
#[pyfunction]
#[pyo3(signature = (accuracies, sample_std=false))]
fn crossval_mean_std(accuracies: Vec<f64>, sample_std: bool) -> PyResult<(f64, f64)> {
    let reports: Vec<EvalReport> = accuracies
        .into_iter()
        .map(|accuracy| EvalReport {
            accuracy,
            correct: 0,
            total: 0,
            per_category: BTreeMap::new(),
            predictions: BTreeMap::new(),
        })
        .collect();
    let kind = if sample_std { StdKind::Sample } else { StdKind::Population };
    let s = crossval_summary(&reports, kind).map_err(to_py)?;
    Ok((s.overall.mean, s.overall.std))
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("trope".to_string()).chain(args).collect();
    py.detach(|| trope_core::cli::run(argv))
}

#[pymodule]
fn trope(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(py_story_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_trope_loss, m)?)?;
    m.add_function(wrap_pyfunction!(py_total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(crossval_mean_std, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
