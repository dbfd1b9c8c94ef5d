//! Trope classification over precomputed multi-modal video features.
//!
//! Per-stream bidirectional LSTM encoders feed a trope classifier. An
//! optional storyteller maps the video embedding into the space of a frozen
//! text encoder and is trained to match the embedding of a human-written
//! description, both as an auxiliary loss and as an extra classifier input.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod humaneval;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod optim;
pub mod stats;
pub mod storyteller;
pub mod synth;
pub mod train;

pub use config::{ExperimentConfig, Mode, StoryInput};
pub use corpus::{Category, Example, FeatureStore, FoldRun, Modality, ModalityFeature, SplitSet, Taxonomy};
pub use error::{Error, Result};
pub use eval::{crossval_summary, evaluate_split, per_category_accuracy, CrossvalSummary, EvalReport};
pub use head::{argmax_trope, predict_trope, total_loss, trope_loss, LossWeights, TropeDistribution};
pub use humaneval::{sample_questions, MCQuestion};
pub use model::{Sample, TrustModel};
pub use storyteller::{story_loss, tell_story, AnchorBackend, ContextualBackend, PooledTokenBackend};
pub use synth::{gen_synthetic_corpus, SyntheticSpec};
pub use train::{fit, load_samples, Checkpoint, SampleSet};
