//! Sample loading, optimization steps, early-stopped fitting and checkpoints.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{truncate_frames, Example, FeatureStore, FoldRun};
use crate::error::{Error, Result};
use crate::model::{LossParts, Sample, TrustModel};
use crate::nn::Parameterized;
use crate::optim::Adam;
use crate::storyteller::ContextualBackend;

/// Per-sample gradients are summed in fixed-size chunks, then chunks are
/// summed in order, so results do not depend on thread scheduling.
const GRAD_CHUNK: usize = 4;

/// Fit aborts once more than this share of steps hit a non-finite loss.
const MAX_FAILED_STEP_FRACTION: f64 = 0.1;

/// Loaded samples keyed by video id.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    samples: HashMap<String, Sample>,
}

impl SampleSet {
    pub fn new(samples: impl IntoIterator<Item = Sample>) -> Self {
        SampleSet {
            samples: samples
                .into_iter()
                .map(|s| (s.video_id.clone(), s))
                .collect(),
        }
    }

    pub fn get(&self, video_id: &str) -> Option<&Sample> {
        self.samples.get(video_id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples for `ids`, in order; fails on the first id without features.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|id| {
                self.samples.get(id).ok_or_else(|| Error::MissingFeature {
                    video_id: id.clone(),
                    modality: "*".into(),
                })
            })
            .collect()
    }
}

/// Reads every configured stream for each example (truncating frame-indexed
/// streams) and, for storyteller modes, embeds descriptions with the frozen
/// backend.
pub fn load_samples(
    examples: &[Example],
    store: &FeatureStore,
    config: &ExperimentConfig,
    backend: Option<&dyn ContextualBackend>,
) -> Result<SampleSet> {
    let mut store = store.clone();
    for spec in &config.streams {
        store = store.with_dim(spec.modality, spec.input_dim);
    }
    let backend = if config.mode.has_storyteller() {
        let b = backend.ok_or_else(|| {
            Error::BackendUnavailable(format!("{} mode needs a contextual backend", config.mode.name()))
        })?;
        if b.dim() != config.context.dim {
            return Err(Error::Config(format!(
                "context dim {} does not match backend dim {}",
                config.context.dim,
                b.dim()
            )));
        }
        Some(b)
    } else {
        None
    };
    let samples: Result<Vec<Sample>> = examples
        .par_iter()
        .map(|e| {
            let streams = config
                .streams
                .iter()
                .map(|spec| {
                    let f = store.load_feature(&e.video_id, spec.modality)?;
                    Ok(truncate_frames(&f, config.max_frames).to_sequence())
                })
                .collect::<Result<Vec<_>>>()?;
            let context = match (backend, &e.description) {
                (Some(b), Some(text)) => {
                    let c = b.embed(text)?.0;
                    if c.dot(&c) == 0.0 {
                        return Err(Error::ZeroNormContext);
                    }
                    Some(c)
                }
                _ => None,
            };
            Ok(Sample {
                video_id: e.video_id.clone(),
                trope_id: e.trope_id,
                streams,
                context,
            })
        })
        .collect();
    Ok(SampleSet::new(samples?))
}

/// Fresh parameters for `config`.
pub fn init_params(config: &ExperimentConfig, n_tropes: usize, seed: u64) -> TrustModel {
    TrustModel::init(config, n_tropes, seed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss: f64,
    /// Mean story loss over samples that have a description; 0 otherwise.
    pub story_loss: f64,
    pub trope_loss: f64,
    pub correct: usize,
    pub count: usize,
    pub clamped: usize,
}

impl StepMetrics {
    fn from_parts(parts: &[LossParts], targets: impl Iterator<Item = usize>) -> Self {
        let n = parts.len().max(1) as f64;
        let stories: Vec<f64> = parts.iter().filter_map(|p| p.story).collect();
        StepMetrics {
            loss: parts.iter().map(|p| p.total).sum::<f64>() / n,
            story_loss: if stories.is_empty() {
                0.0
            } else {
                stories.iter().sum::<f64>() / stories.len() as f64
            },
            trope_loss: parts.iter().map(|p| p.trope).sum::<f64>() / n,
            correct: parts
                .iter()
                .zip(targets)
                .filter(|(p, t)| p.predicted == *t)
                .count(),
            count: parts.len(),
            clamped: parts.iter().filter(|p| p.clamped).count(),
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// Mean loss and gradient over a batch.
pub fn batch_gradient(
    model: &TrustModel,
    batch: &[&Sample],
    config: &ExperimentConfig,
) -> Result<(TrustModel, StepMetrics)> {
    let weights = config.weights();
    let partials: Vec<Result<(TrustModel, Vec<LossParts>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = model.zeros_like();
            let mut parts = Vec::with_capacity(chunk.len());
            for s in chunk {
                parts.push(model.accumulate_gradient(s, weights, &mut grad)?);
            }
            Ok((grad, parts))
        })
        .collect();
    let mut total = model.zeros_like();
    let mut parts = Vec::with_capacity(batch.len());
    for partial in partials {
        let (g, p) = partial?;
        total.add_scaled(&g, 1.0);
        parts.extend(p);
    }
    if let Some(i) = parts.iter().position(|p| !p.total.is_finite()) {
        return Err(Error::NonFiniteLoss {
            video_id: batch[i].video_id.clone(),
        });
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    for b in total.blocks_mut("") {
        b.data.iter_mut().for_each(|v| *v *= scale);
    }
    let metrics = StepMetrics::from_parts(&parts, batch.iter().map(|s| s.trope_id));
    Ok((total, metrics))
}

/// One optimizer update on the batch loss. Parameters are left untouched
/// when any sample produces a non-finite loss.
pub fn train_step(
    model: &mut TrustModel,
    optimizer: &mut Adam,
    batch: &[&Sample],
    config: &ExperimentConfig,
) -> Result<StepMetrics> {
    let (grad, metrics) = batch_gradient(model, batch, config)?;
    optimizer.update(model, &grad);
    Ok(metrics)
}

/// Forward-only pass over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPass {
    pub metrics: StepMetrics,
    pub predictions: Vec<usize>,
}

pub fn evaluate_samples(
    model: &TrustModel,
    samples: &[&Sample],
    config: &ExperimentConfig,
) -> Result<SplitPass> {
    let weights = config.weights();
    let parts: Vec<LossParts> = samples
        .par_iter()
        .map(|s| model.loss(s, weights))
        .collect::<Result<_>>()?;
    Ok(SplitPass {
        metrics: StepMetrics::from_parts(&parts, samples.iter().map(|s| s.trope_id)),
        predictions: parts.iter().map(|p| p.predicted).collect(),
    })
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub story_loss: f64,
    pub trope_loss: f64,
    pub accuracy: f64,
}

impl EpochRecord {
    fn new(fold: usize, epoch: usize, split: &str, m: &StepMetrics) -> Self {
        EpochRecord {
            fold,
            epoch,
            split: split.to_string(),
            loss: m.loss,
            story_loss: m.story_loss,
            trope_loss: m.trope_loss,
            accuracy: m.accuracy(),
        }
    }
}

/// Appends records as JSON lines.
pub struct MetricsLog<W: std::io::Write> {
    out: W,
}

impl<W: std::io::Write> MetricsLog<W> {
    pub fn new(out: W) -> Self {
        MetricsLog { out }
    }

    pub fn write(&mut self, record: &EpochRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(self.out, "{line}")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Best-validation model of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub n_tropes: usize,
    pub fingerprint: String,
    pub best_val_accuracy: f64,
    pub epoch: usize,
    pub model: TrustModel,
}

/// Trains on `fold.train`, selecting the epoch with the best validation
/// accuracy. Stops after `patience` epochs without improvement.
pub fn fit(
    fold: &FoldRun,
    samples: &SampleSet,
    config: &ExperimentConfig,
    n_tropes: usize,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    let train = samples.select(&fold.train)?;
    let val = samples.select(&fold.val)?;
    if train.is_empty() {
        return Err(Error::Invalid(format!("fold {} has no training examples", fold.fold_index)));
    }
    let mut model = init_params(config, n_tropes, config.seed);
    let mut optimizer = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed_0f_f17));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(TrustModel, usize, f64)> = None;
    let mut since_best = 0usize;
    let (mut steps, mut failed) = (0usize, 0usize);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut parts = StepMetrics::default();
        let mut weighted = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            steps += 1;
            match train_step(&mut model, &mut optimizer, &batch, config) {
                Ok(m) => {
                    let n = m.count as f64;
                    weighted.0 += m.loss * n;
                    weighted.1 += m.story_loss * n;
                    weighted.2 += m.trope_loss * n;
                    parts.correct += m.correct;
                    parts.count += m.count;
                    parts.clamped += m.clamped;
                }
                Err(Error::NonFiniteLoss { .. }) => failed += 1,
                Err(e) => return Err(e),
            }
        }
        if failed as f64 > MAX_FAILED_STEP_FRACTION * steps as f64 {
            return Err(Error::TrainingAborted(format!(
                "{failed} of {steps} steps had a non-finite loss"
            )));
        }
        let n = parts.count.max(1) as f64;
        parts.loss = weighted.0 / n;
        parts.story_loss = weighted.1 / n;
        parts.trope_loss = weighted.2 / n;
        observer(&EpochRecord::new(fold.fold_index, epoch, "train", &parts));

        let selection = if val.is_empty() {
            evaluate_samples(&model, &train, config)?.metrics
        } else {
            evaluate_samples(&model, &val, config)?.metrics
        };
        observer(&EpochRecord::new(fold.fold_index, epoch, "val", &selection));

        let acc = selection.accuracy();
        if best.as_ref().is_none_or(|(_, _, b)| acc > *b) {
            best = Some((model.clone(), epoch, acc));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }

    let (model, epoch, best_val_accuracy) = best.expect("max_epochs >= 1");
    Ok(Checkpoint {
        config: config.clone(),
        n_tropes,
        fingerprint: config.fingerprint(),
        best_val_accuracy,
        epoch,
        model,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TRCK";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ExperimentConfig,
    n_tropes: usize,
    fingerprint: String,
    best_val_accuracy: f64,
    epoch: usize,
    blocks: Vec<BlockHeader>,
}

#[derive(Serialize, Deserialize, PartialEq)]
struct BlockHeader {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Binary layout: `TRCK`, u32 version, u64 header length, JSON header,
    /// then every parameter block as little-endian f64 in header order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let blocks = self.model.blocks("");
        let header = CheckpointHeader {
            config: self.config.clone(),
            n_tropes: self.n_tropes,
            fingerprint: self.fingerprint.clone(),
            best_val_accuracy: self.best_val_accuracy,
            epoch: self.epoch,
            blocks: blocks
                .iter()
                .map(|b| BlockHeader {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
        let numel: usize = blocks.iter().map(|b| b.data.len()).sum();
        let mut buf = Vec::with_capacity(16 + json.len() + numel * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for b in &blocks {
            for v in b.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::format(path, e.to_string()))?;
        header.config.validate()?;

        let mut model = TrustModel::zeros(&header.config, header.n_tropes);
        let mut payload = bytes[header_end..].chunks_exact(8);
        {
            let blocks = model.blocks_mut("");
            let layout: Vec<BlockHeader> = blocks
                .iter()
                .map(|b| BlockHeader {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                })
                .collect();
            if layout != header.blocks {
                return Err(Error::format(path, "parameter layout does not match config"));
            }
            for b in blocks {
                for v in b.data.iter_mut() {
                    let chunk = payload
                        .next()
                        .ok_or_else(|| Error::format(path, "truncated parameters"))?;
                    *v = f64::from_le_bytes(chunk.try_into().unwrap());
                }
            }
        }
        if payload.next().is_some() || !payload.remainder().is_empty() {
            return Err(Error::format(path, "trailing bytes after parameters"));
        }
        Ok(Checkpoint {
            config: header.config,
            n_tropes: header.n_tropes,
            fingerprint: header.fingerprint,
            best_val_accuracy: header.best_val_accuracy,
            epoch: header.epoch,
            model,
        })
    }
}
