//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Modality, DEFAULT_MAX_FRAMES};
use crate::encoder::{StreamSpec, DEFAULT_HIDDEN_DIM};
use crate::error::{Error, Result};
use crate::head::LossWeights;
use crate::nn::Activation;
use crate::storyteller::{TokenPooling, DEFAULT_CONTEXT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stream encoders and trope head only.
    Baseline,
    /// Storyteller trained with the story loss, but its output is not fed to
    /// the trope head.
    MultitaskOnly,
    /// Storyteller trained with the story loss and fed to the trope head.
    TrustFull,
    /// Baseline architecture over description token features.
    Oracle,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::MultitaskOnly, Mode::TrustFull, Mode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::MultitaskOnly => "multitask_only",
            Mode::TrustFull => "trust_full",
            Mode::Oracle => "oracle",
        }
    }

    pub fn parse(name: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn has_storyteller(self) -> bool {
        matches!(self, Mode::MultitaskOnly | Mode::TrustFull)
    }
}

/// How the story embedding reaches the trope head in `trust_full`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoryInput {
    /// Fed to the head; head gradients flow back into the storyteller.
    #[default]
    Attached,
    /// Fed to the head as a constant; only the story loss trains the storyteller.
    Detached,
    /// Not fed to the head.
    Disabled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Exact text -> vector table (`anchors.json`), as written by the
    /// synthetic generator.
    #[default]
    Anchors,
    /// Pooled precomputed token vectors of a pretrained text encoder.
    PooledTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub backend: BackendKind,
    pub dim: usize,
    /// Anchor file or token directory. Relative paths resolve against the
    /// corpus directory.
    pub path: Option<PathBuf>,
    pub pooling: TokenPooling,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            backend: BackendKind::Anchors,
            dim: DEFAULT_CONTEXT_DIM,
            path: None,
            pooling: TokenPooling::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_frames: usize,
    pub storyteller_hidden: usize,
    pub classifier_hidden: usize,
    pub activation: Activation,
    pub story_input: StoryInput,
    pub context: ContextConfig,
    pub streams: Vec<StreamSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::TrustFull,
            alpha: 1.0,
            beta: 1.0,
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            max_frames: DEFAULT_MAX_FRAMES,
            storyteller_hidden: 512,
            classifier_hidden: 512,
            activation: Activation::Relu,
            story_input: StoryInput::Attached,
            context: ContextConfig::default(),
            streams: vec![
                StreamSpec::new(Modality::Motion, Modality::Motion.default_dim(), DEFAULT_HIDDEN_DIM),
                StreamSpec::new(Modality::Asr, Modality::Asr.default_dim(), DEFAULT_HIDDEN_DIM),
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::Config("at least one stream is required".into()));
        }
        for (i, s) in self.streams.iter().enumerate() {
            if s.input_dim == 0 || s.hidden_dim == 0 {
                return Err(Error::Config(format!("stream {} has a zero dimension", s.modality)));
            }
            if self.streams[..i].iter().any(|o| o.modality == s.modality) {
                return Err(Error::Config(format!("stream {} declared twice", s.modality)));
            }
        }
        let description_only =
            self.streams.len() == 1 && self.streams[0].modality == Modality::Description;
        match self.mode {
            Mode::Oracle if !description_only => {
                return Err(Error::Config(
                    "oracle mode takes exactly one stream: description".into(),
                ))
            }
            Mode::Oracle => {}
            _ if self.streams.iter().any(|s| s.modality == Modality::Description) => {
                return Err(Error::Config(
                    "the description stream is reserved for oracle mode".into(),
                ))
            }
            _ => {}
        }
        self.weights().validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_frames == 0 {
            return Err(Error::Config(
                "batch_size, max_epochs and max_frames must be positive".into(),
            ));
        }
        if self.context.dim == 0 || self.storyteller_hidden == 0 || self.classifier_hidden == 0 {
            return Err(Error::Config("hidden and context sizes must be positive".into()));
        }
        Ok(())
    }

    /// Loss weights with the story term removed for modes without a
    /// storyteller.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: if self.mode.has_storyteller() { self.alpha } else { 0.0 },
            beta: self.beta,
        }
    }

    /// Whether the trope head consumes the story embedding.
    pub fn feeds_story(&self) -> bool {
        self.mode == Mode::TrustFull && self.story_input != StoryInput::Disabled
    }

    pub fn video_dim(&self) -> usize {
        self.streams.iter().map(StreamSpec::output_dim).sum()
    }

    /// Same settings retargeted to another mode. Oracle swaps the streams for
    /// a single description stream sized to the context dimension; leaving
    /// oracle falls back to the defaults' streams.
    pub fn with_mode(&self, mode: Mode, raw_streams: &[StreamSpec]) -> Self {
        let mut out = self.clone();
        out.mode = mode;
        let hidden = raw_streams
            .first()
            .map_or(DEFAULT_HIDDEN_DIM, |s| s.hidden_dim);
        out.streams = if mode == Mode::Oracle {
            vec![StreamSpec::new(Modality::Description, self.context.dim, hidden)]
        } else {
            raw_streams.to_vec()
        };
        out
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::storyteller::hex(&Sha256::digest(json.as_bytes()))
    }
}
