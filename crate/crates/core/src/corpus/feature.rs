//! Precomputed per-video feature tensors.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes   "TRUM"
//! version   u16       currently 1
//! name_len  u16       length of the modality name in bytes
//! name      name_len  UTF-8 modality name
//! rank      u8
//! shape     rank * u32
//! payload   f32 * product(shape), row-major
//! ```
//!
//! Object features are rank 3, `[frames, objects, 2048 + 4]`: every detection
//! carries its 2048-d embedding followed by the normalized box `(x1, y1, x2, y2)`.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"TRUM";
pub const FEATURE_VERSION: u16 = 1;
pub const DEFAULT_MAX_FRAMES: usize = 100;
pub const OBJECT_BOX_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Appearance,
    Motion,
    Sound,
    Asr,
    Object,
    Description,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Appearance,
        Modality::Motion,
        Modality::Sound,
        Modality::Asr,
        Modality::Object,
        Modality::Description,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Appearance => "appearance",
            Modality::Motion => "motion",
            Modality::Sound => "sound",
            Modality::Asr => "asr",
            Modality::Object => "object",
            Modality::Description => "description",
        }
    }

    pub fn parse(name: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Size of the innermost axis produced by the reference extractors.
    pub fn default_dim(self) -> usize {
        match self {
            Modality::Appearance => 2048,
            Modality::Motion => 1024,
            Modality::Sound => 1024,
            Modality::Asr => 768,
            Modality::Object => 2048 + OBJECT_BOX_DIM,
            Modality::Description => 768,
        }
    }

    pub fn rank(self) -> usize {
        match self {
            Modality::Object => 3,
            _ => 2,
        }
    }

    /// Streams whose first axis indexes sampled video frames.
    pub fn is_frame_indexed(self) -> bool {
        matches!(
            self,
            Modality::Appearance | Modality::Motion | Modality::Object
        )
    }

    pub fn frame_rate(self) -> Option<f64> {
        self.is_frame_indexed().then_some(0.5)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeature {
    pub modality: Modality,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ModalityFeature {
    pub fn new(modality: Modality, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.len() != modality.rank() {
            return Err(Error::Dimension(format!(
                "{modality} expects rank {}, got {}",
                modality.rank(),
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(ModalityFeature {
            modality,
            shape,
            data,
        })
    }

    /// Builds a rank-2 feature from a `[T x D]` matrix.
    pub fn from_rows(modality: Modality, rows: &Array2<f32>) -> Result<Self> {
        let shape = vec![rows.nrows(), rows.ncols()];
        ModalityFeature::new(modality, shape, rows.iter().copied().collect())
    }

    pub fn frames(&self) -> usize {
        self.shape[0]
    }

    pub fn feature_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 2")
    }

    fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn frame_rate(&self) -> Option<f64> {
        self.modality.frame_rate()
    }

    pub fn first_non_finite_row(&self) -> Option<usize> {
        let row_len = self.row_len().max(1);
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| i / row_len)
    }

    /// The `[T x D]` sequence fed to a stream encoder. Object detections are
    /// mean-pooled per frame, which pools embeddings and boxes alike.
    pub fn to_sequence(&self) -> Array2<f64> {
        match self.shape.as_slice() {
            &[t, d] => Array2::from_shape_fn((t, d), |(i, j)| f64::from(self.data[i * d + j])),
            &[t, k, d] => {
                let mut out = Array2::zeros((t, d));
                for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                    for obj in 0..k {
                        let base = (i * k + obj) * d;
                        for (j, v) in row.iter_mut().enumerate() {
                            *v += f64::from(self.data[base + j]);
                        }
                    }
                    if k > 0 {
                        row.mapv_inplace(|v| v / k as f64);
                    }
                }
                out
            }
            _ => unreachable!("rank checked at construction"),
        }
    }
}

/// Keeps the first `max_frames` frames of frame-indexed streams; other
/// streams are returned unchanged.
pub fn truncate_frames(feature: &ModalityFeature, max_frames: usize) -> ModalityFeature {
    let max_frames = max_frames.max(1);
    if !feature.modality.is_frame_indexed() || feature.frames() <= max_frames {
        return feature.clone();
    }
    let row_len = feature.row_len();
    let mut shape = feature.shape.clone();
    shape[0] = max_frames;
    ModalityFeature {
        modality: feature.modality,
        shape,
        data: feature.data[..max_frames * row_len].to_vec(),
    }
}

pub fn write_feature(path: impl AsRef<Path>, feature: &ModalityFeature) -> Result<()> {
    let path = path.as_ref();
    let name = feature.modality.name().as_bytes();
    let mut buf = Vec::with_capacity(16 + name.len() + 4 * feature.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name);
    buf.push(feature.shape.len() as u8);
    for &d in &feature.shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::format(path, format!("axis length {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in &feature.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::format(path, "truncated header"));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Reads and checks a feature file: magic, version, shape against payload
/// length, and finiteness of every value.
pub fn read_feature(path: impl AsRef<Path>) -> Result<ModalityFeature> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    let mut bytes = raw.as_slice();

    if take(&mut bytes, 4, path)? != FEATURE_MAGIC {
        return Err(Error::format(path, "bad magic, expected TRUM"));
    }
    let version = u16::from_le_bytes(take(&mut bytes, 2, path)?.try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let name_len = u16::from_le_bytes(take(&mut bytes, 2, path)?.try_into().unwrap()) as usize;
    let name = std::str::from_utf8(take(&mut bytes, name_len, path)?)
        .map_err(|_| Error::format(path, "modality name is not UTF-8"))?;
    let modality = Modality::parse(name)
        .ok_or_else(|| Error::format(path, format!("unknown modality {name:?}")))?;
    let rank = take(&mut bytes, 1, path)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(&mut bytes, 4, path)?.try_into().unwrap()) as usize);
    }
    let numel: usize = shape.iter().product();
    if bytes.len() != numel * 4 {
        return Err(Error::format(
            path,
            format!(
                "payload holds {} bytes, shape {shape:?} needs {}",
                bytes.len(),
                numel * 4
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let feature = ModalityFeature::new(modality, shape, data)?;
    if let Some(row) = feature.first_non_finite_row() {
        return Err(Error::NonFinite { row });
    }
    Ok(feature)
}

/// Directory of feature files laid out as `<root>/<video_id>/<modality>.trum`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
    dims: HashMap<Modality, usize>,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureStore {
            root: root.into(),
            dims: HashMap::new(),
        }
    }

    /// Overrides the expected innermost dimension of a stream.
    pub fn with_dim(mut self, modality: Modality, dim: usize) -> Self {
        self.dims.insert(modality, dim);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn expected_dim(&self, modality: Modality) -> usize {
        self.dims
            .get(&modality)
            .copied()
            .unwrap_or_else(|| modality.default_dim())
    }

    pub fn path_for(&self, video_id: &str, modality: Modality) -> PathBuf {
        self.root
            .join(video_id)
            .join(format!("{}.trum", modality.name()))
    }

    pub fn contains(&self, video_id: &str, modality: Modality) -> bool {
        self.path_for(video_id, modality).is_file()
    }

    pub fn write(&self, video_id: &str, feature: &ModalityFeature) -> Result<()> {
        write_feature(self.path_for(video_id, feature.modality), feature)
    }

    pub fn load_feature(&self, video_id: &str, modality: Modality) -> Result<ModalityFeature> {
        let path = self.path_for(video_id, modality);
        if !path.is_file() {
            return Err(Error::MissingFeature {
                video_id: video_id.to_string(),
                modality: modality.name().to_string(),
            });
        }
        let feature = read_feature(&path)?;
        if feature.modality != modality {
            return Err(Error::format(
                &path,
                format!("file holds {} features, expected {modality}", feature.modality),
            ));
        }
        let expected = self.expected_dim(modality);
        if feature.feature_dim() != expected {
            return Err(Error::Dimension(format!(
                "{modality} requires {expected}, file declares {}",
                feature.feature_dim()
            )));
        }
        if modality == Modality::Object {
            let d = feature.feature_dim();
            let out_of_range = feature
                .data
                .chunks_exact(d)
                .flat_map(|det| &det[d - OBJECT_BOX_DIM..])
                .any(|v| !(0.0..=1.0).contains(v));
            if out_of_range {
                return Err(Error::format(&path, "object box coordinates outside [0, 1]"));
            }
        }
        if modality == Modality::Asr && feature.frames() == 0 {
            // An empty transcript becomes one zero row so encoders never see T = 0.
            return ModalityFeature::new(modality, vec![1, expected], vec![0.0; expected]);
        }
        Ok(feature)
    }
}
