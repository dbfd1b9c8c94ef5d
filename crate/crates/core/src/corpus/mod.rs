//! Dataset schema: trope taxonomy, video examples, split files and
//! precomputed modality features.

mod feature;
mod splits;

pub use feature::{
    read_feature, truncate_frames, write_feature, FeatureStore, Modality, ModalityFeature,
    DEFAULT_MAX_FRAMES, FEATURE_MAGIC, FEATURE_VERSION, OBJECT_BOX_DIM,
};
pub use splits::{
    derive_fold_runs, load_splits, write_splits, FoldRun, SplitKind, SplitSet, FOLD_COUNT,
    VAL_FRACTION,
};

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of the full trope taxonomy.
pub const TROPE_COUNT: usize = 132;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CharacterTrait,
    RoleInteraction,
    SceneIdentification,
    SituationUnderstanding,
    StoryUnderstanding,
    Sentiment,
    Audio,
    Manipulation,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::CharacterTrait,
        Category::RoleInteraction,
        Category::SceneIdentification,
        Category::SituationUnderstanding,
        Category::StoryUnderstanding,
        Category::Sentiment,
        Category::Audio,
        Category::Manipulation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::CharacterTrait => "character_trait",
            Category::RoleInteraction => "role_interaction",
            Category::SceneIdentification => "scene_identification",
            Category::SituationUnderstanding => "situation_understanding",
            Category::StoryUnderstanding => "story_understanding",
            Category::Sentiment => "sentiment",
            Category::Audio => "audio",
            Category::Manipulation => "manipulation",
        }
    }

    /// Short column header used in printed tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Category::CharacterTrait => "C.Trait",
            Category::RoleInteraction => "R.Inter",
            Category::SceneIdentification => "SceneId",
            Category::SituationUnderstanding => "Situ.U",
            Category::StoryUnderstanding => "Story.U",
            Category::Sentiment => "Sent.",
            Category::Audio => "Audio",
            Category::Manipulation => "Mani.",
        }
    }

    pub fn parse(name: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TropeLabel {
    pub id: usize,
    pub name: String,
    pub categories: BTreeSet<Category>,
}

impl TropeLabel {
    pub fn shares_category(&self, other: &TropeLabel) -> bool {
        self.categories.iter().any(|c| other.categories.contains(c))
    }
}

/// One entry of the taxonomy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub trope: String,
    pub categories: Vec<Category>,
}

/// Trope names with their categories. Ids follow sorted name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    tropes: Vec<TropeLabel>,
    by_name: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn new(entries: impl IntoIterator<Item = TaxonomyEntry>) -> Result<Self> {
        let mut entries: Vec<TaxonomyEntry> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(Error::Invalid("taxonomy has no tropes".into()));
        }
        entries.sort_by(|a, b| a.trope.cmp(&b.trope));
        let mut tropes = Vec::with_capacity(entries.len());
        let mut by_name = HashMap::with_capacity(entries.len());
        for (id, entry) in entries.into_iter().enumerate() {
            if entry.categories.is_empty() {
                return Err(Error::Invalid(format!(
                    "trope {:?} has no category",
                    entry.trope
                )));
            }
            if by_name.insert(entry.trope.clone(), id).is_some() {
                return Err(Error::Invalid(format!("duplicate trope {:?}", entry.trope)));
            }
            tropes.push(TropeLabel {
                id,
                name: entry.trope,
                categories: entry.categories.into_iter().collect(),
            });
        }
        Ok(Taxonomy { tropes, by_name })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<TaxonomyEntry> =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Taxonomy::new(entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.entries())
            .map_err(|e| Error::format(path, e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> Vec<TaxonomyEntry> {
        self.tropes
            .iter()
            .map(|t| TaxonomyEntry {
                trope: t.name.clone(),
                categories: t.categories.iter().copied().collect(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tropes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tropes.is_empty()
    }

    /// True when the taxonomy has the full 132 tropes.
    pub fn is_full(&self) -> bool {
        self.tropes.len() == TROPE_COUNT
    }

    pub fn tropes(&self) -> &[TropeLabel] {
        &self.tropes
    }

    pub fn get(&self, id: usize) -> Option<&TropeLabel> {
        self.tropes.get(id)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn categories_of(&self, id: usize) -> impl Iterator<Item = Category> + '_ {
        self.tropes[id].categories.iter().copied()
    }

    /// Number of tropes that belong to `category`.
    pub fn trope_count(&self, category: Category) -> usize {
        self.tropes
            .iter()
            .filter(|t| t.categories.contains(&category))
            .count()
    }
}

/// A parsed, validated video record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub video_id: String,
    pub trope_id: usize,
    pub description: Option<String>,
    pub asr_transcript: String,
    pub duration_seconds: Option<f64>,
}

/// A record as stored in a split file, before taxonomy lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub video_id: String,
    pub trope: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitKind>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub asr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

impl ExampleRecord {
    pub fn from_example(example: &Example, taxonomy: &Taxonomy, split: SplitKind) -> Self {
        ExampleRecord {
            video_id: example.video_id.clone(),
            trope: taxonomy.tropes()[example.trope_id].name.clone(),
            split: Some(split),
            description: example.description.clone(),
            asr: example.asr_transcript.clone(),
            duration: example.duration_seconds,
        }
    }

    pub fn into_example(self, taxonomy: &Taxonomy) -> Result<Example> {
        let issues = validate_example(&self, taxonomy);
        if let Some(issue) = issues.issues.into_iter().next() {
            return Err(match issue {
                Issue::UnknownTrope(name) => Error::UnknownTrope(name),
                other => Error::Invalid(format!("{}: {other}", self.video_id)),
            });
        }
        let trope_id = taxonomy.id_of(&self.trope).expect("validated");
        Ok(Example {
            video_id: self.video_id,
            trope_id,
            description: self.description.filter(|d| !d.is_empty()),
            asr_transcript: self.asr,
            duration_seconds: self.duration,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    EmptyVideoId,
    UnknownTrope(String),
    NonPositiveDuration(f64),
    NonFiniteDuration,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::EmptyVideoId => write!(f, "empty video_id"),
            Issue::UnknownTrope(name) => write!(f, "unknown trope {name:?}"),
            Issue::NonPositiveDuration(d) => write!(f, "non-positive duration {d}"),
            Issue::NonFiniteDuration => write!(f, "non-finite duration"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.issues.iter().map(ToString::to_string).collect()
    }
}

/// Lists every violated record invariant. An empty report means the
/// record is valid.
pub fn validate_example(record: &ExampleRecord, taxonomy: &Taxonomy) -> ValidationReport {
    let mut issues = Vec::new();
    if record.video_id.trim().is_empty() {
        issues.push(Issue::EmptyVideoId);
    }
    if taxonomy.id_of(&record.trope).is_none() {
        issues.push(Issue::UnknownTrope(record.trope.clone()));
    }
    if let Some(d) = record.duration {
        if !d.is_finite() {
            issues.push(Issue::NonFiniteDuration);
        } else if d <= 0.0 {
            issues.push(Issue::NonPositiveDuration(d));
        }
    }
    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy() -> Taxonomy {
        Taxonomy::new([
            TaxonomyEntry {
                trope: "Villain Song".into(),
                categories: vec![Category::Audio, Category::CharacterTrait],
            },
            TaxonomyEntry {
                trope: "Big NO".into(),
                categories: vec![Category::Sentiment],
            },
        ])
        .unwrap()
    }

    fn record() -> ExampleRecord {
        ExampleRecord {
            video_id: "v001".into(),
            trope: "Big NO".into(),
            split: None,
            description: Some("someone screams".into()),
            asr: String::new(),
            duration: Some(12.5),
        }
    }

    #[test]
    fn category_names_are_stable() {
        assert_eq!(Category::ALL.len(), 8);
        for c in Category::ALL {
            assert_eq!(Category::parse(c.name()), Some(c));
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.name()));
        }
    }

    #[test]
    fn ids_follow_sorted_names() {
        let tax = taxonomy();
        assert_eq!(tax.id_of("Big NO"), Some(0));
        assert_eq!(tax.id_of("Villain Song"), Some(1));
        assert_eq!(tax.trope_count(Category::Audio), 1);
        assert!(!tax.is_full());
    }

    #[test]
    fn taxonomy_rejects_empty_category_set() {
        let err = Taxonomy::new([TaxonomyEntry {
            trope: "x".into(),
            categories: vec![],
        }]);
        assert!(err.is_err());
    }

    #[test]
    fn taxonomy_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("taxonomy.json");
        let tax = taxonomy();
        tax.save(&path).unwrap();
        assert_eq!(Taxonomy::load(&path).unwrap(), tax);
    }

    #[test]
    fn valid_record_has_empty_report() {
        assert!(validate_example(&record(), &taxonomy()).is_valid());
    }

    #[test]
    fn zero_duration_is_reported() {
        let mut r = record();
        r.duration = Some(0.0);
        let report = validate_example(&r, &taxonomy());
        assert_eq!(report.issues.len(), 1);
        assert!(report.messages()[0].contains("non-positive duration"));
    }

    #[test]
    fn unknown_trope_is_reported() {
        let mut r = record();
        r.trope = "Not A Trope".into();
        r.duration = Some(-1.0);
        let report = validate_example(&r, &taxonomy());
        let messages = report.messages();
        assert!(messages.iter().any(|m| m.contains("unknown trope")));
        assert!(messages.iter().any(|m| m.contains("non-positive duration")));
    }

    #[test]
    fn record_to_example_drops_empty_description() {
        let mut r = record();
        r.description = Some(String::new());
        let e = r.into_example(&taxonomy()).unwrap();
        assert_eq!(e.trope_id, 0);
        assert_eq!(e.description, None);
    }
}
