//! Latent storytelling: a feed-forward map from the video embedding to the
//! description space, frozen contextual description encoders, and the
//! cosine story loss.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{read_feature, Modality};
use crate::encoder::VideoEmbedding;
use crate::error::{Error, Result};
use crate::nn::{Mlp2, Mlp2Trace};

/// Norm below which a story vector gets nudged off the origin.
pub const STORY_NORM_FLOOR: f64 = 1e-8;

pub const DEFAULT_CONTEXT_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq)]
pub struct StoryEmbedding(pub Array1<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding(pub Array1<f64>);

/// A frozen text encoder producing one vector per description.
pub trait ContextualBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<ContextEmbedding>;
    /// Digest of every value that determines the backend's output.
    fn checksum(&self) -> String;
}

pub fn embed_description(backend: &dyn ContextualBackend, text: &str) -> Result<ContextEmbedding> {
    backend.embed(text)
}

/// Exact lookup of precomputed anchor vectors by text.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorBackend {
    dim: usize,
    anchors: BTreeMap<String, Array1<f64>>,
}

#[derive(Serialize, Deserialize)]
struct AnchorFile {
    dim: usize,
    anchors: Vec<AnchorRecord>,
}

#[derive(Serialize, Deserialize)]
struct AnchorRecord {
    text: String,
    vector: Vec<f32>,
}

impl AnchorBackend {
    pub fn new(dim: usize, anchors: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (text, vector) in anchors {
            if vector.len() != dim {
                return Err(Error::Dimension(format!(
                    "anchor {text:?} has dim {}, expected {dim}",
                    vector.len()
                )));
            }
            map.insert(text, vector.iter().map(|&v| f64::from(v)).collect());
        }
        Ok(AnchorBackend { dim, anchors: map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::BackendUnavailable(format!("{}: {e}", path.display())))?;
        let file: AnchorFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        AnchorBackend::new(
            file.dim,
            file.anchors.into_iter().map(|a| (a.text, a.vector)),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = AnchorFile {
            dim: self.dim,
            anchors: self
                .anchors
                .iter()
                .map(|(text, v)| AnchorRecord {
                    text: text.clone(),
                    vector: v.iter().map(|&x| x as f32).collect(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn anchor(&self, text: &str) -> Option<&Array1<f64>> {
        self.anchors.get(text)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

impl ContextualBackend for AnchorBackend {
    fn name(&self) -> &'static str {
        "anchors"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<ContextEmbedding> {
        self.anchors
            .get(text)
            .map(|v| ContextEmbedding(v.clone()))
            .ok_or_else(|| Error::BackendUnavailable(format!("no anchor for {text:?}")))
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (text, v) in &self.anchors {
            h.update(text.as_bytes());
            h.update([0]);
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPooling {
    #[default]
    Mean,
    /// Leading token only (the classification token of BERT-style encoders).
    First,
}

/// Sentence embeddings pooled from precomputed last-layer token vectors of
/// a pretrained encoder. Token files are TRUM `description` features named
/// by the SHA-256 of the text: `<dir>/<hex digest>.trum`.
#[derive(Debug, Clone)]
pub struct PooledTokenBackend {
    dir: PathBuf,
    dim: usize,
    pooling: TokenPooling,
}

impl PooledTokenBackend {
    pub fn open(dir: impl Into<PathBuf>, dim: usize, pooling: TokenPooling) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(Error::BackendUnavailable(format!(
                "token directory {} not found",
                dir.display()
            )));
        }
        Ok(PooledTokenBackend { dir, dim, pooling })
    }

    pub fn token_file(&self, text: &str) -> PathBuf {
        self.dir.join(format!("{}.trum", text_key(text)))
    }
}

/// Hex SHA-256 of a description, used to name token files.
pub fn text_key(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

impl ContextualBackend for PooledTokenBackend {
    fn name(&self) -> &'static str {
        "pooled_tokens"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<ContextEmbedding> {
        let path = self.token_file(text);
        if !path.is_file() {
            return Err(Error::BackendUnavailable(format!(
                "no token file for {text:?} ({})",
                path.display()
            )));
        }
        let feature = read_feature(&path)?;
        if feature.modality != Modality::Description || feature.feature_dim() != self.dim {
            return Err(Error::Dimension(format!(
                "{}: expected description tokens of dim {}",
                path.display(),
                self.dim
            )));
        }
        let tokens = feature.to_sequence();
        if tokens.nrows() == 0 {
            return Ok(ContextEmbedding(Array1::zeros(self.dim)));
        }
        let pooled = match self.pooling {
            TokenPooling::Mean => tokens.mean_axis(Axis(0)).expect("non-empty"),
            TokenPooling::First => tokens.row(0).to_owned(),
        };
        Ok(ContextEmbedding(pooled))
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update([self.pooling as u8]);
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&self.dir)
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        entries.sort();
        for path in entries {
            if let Ok(bytes) = std::fs::read(&path) {
                h.update(path.file_name().unwrap_or_default().as_encoded_bytes());
                h.update(&bytes);
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Nudges a (near-)zero vector off the origin so cosine stays defined.
pub fn apply_norm_floor(s: &mut Array1<f64>) {
    if !s.is_empty() && s.dot(s).sqrt() < STORY_NORM_FLOOR {
        s[0] += STORY_NORM_FLOOR;
    }
}

/// Maps a video embedding to a story embedding.
pub fn tell_story(v: &VideoEmbedding, storyteller: &Mlp2) -> Result<StoryEmbedding> {
    tell_story_traced(v.0.view(), storyteller).map(|(s, _)| s)
}

pub(crate) fn tell_story_traced(
    v: ArrayView1<f64>,
    storyteller: &Mlp2,
) -> Result<(StoryEmbedding, Mlp2Trace)> {
    if v.len() != storyteller.input_dim() {
        return Err(Error::Dimension(format!(
            "storyteller expects a {}-d video embedding, got {}",
            storyteller.input_dim(),
            v.len()
        )));
    }
    let trace = storyteller.forward(v.to_owned());
    let mut s = trace.output.clone();
    apply_norm_floor(&mut s);
    Ok((StoryEmbedding(s), trace))
}

/// `1 - cos(s, c)`, in `[0, 2]`.
pub fn story_loss(s: &StoryEmbedding, c: &ContextEmbedding) -> Result<f64> {
    story_loss_grad(s.0.view(), c.0.view()).map(|(l, _)| l)
}

/// Story loss together with its gradient with respect to `s`.
pub fn story_loss_grad(s: ArrayView1<f64>, c: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    if s.len() != c.len() {
        return Err(Error::Dimension(format!(
            "story dim {} vs context dim {}",
            s.len(),
            c.len()
        )));
    }
    let c_norm = c.dot(&c).sqrt();
    if c_norm == 0.0 || !c_norm.is_finite() {
        return Err(Error::ZeroNormContext);
    }
    let mut s = s.to_owned();
    apply_norm_floor(&mut s);
    let s_norm = s.dot(&s).sqrt();
    let dot = s.dot(&c);
    let cos = dot / (s_norm * c_norm);
    let loss = 1.0 - cos.clamp(-1.0, 1.0);
    // d(-cos)/ds = -(c / (|s||c|) - cos * s / |s|^2)
    let grad = (&s * (cos / (s_norm * s_norm))) - (&c / (s_norm * c_norm));
    Ok((loss, grad))
}
