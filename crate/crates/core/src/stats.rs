//! Dataset statistics: video length per category and length buckets.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, Example, Taxonomy};
use crate::error::{Error, Result};

/// Videos shorter than this many seconds count as short.
pub const SHORT_THRESHOLD_SECS: f64 = 20.0;
/// Videos longer than this many seconds count as long.
pub const LONG_THRESHOLD_SECS: f64 = 120.0;

/// Whether each example or each trope (its mean duration) is one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    #[default]
    PerExample,
    PerTropeMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub std_population: f64,
    /// Zero when `count == 1`.
    pub std_sample: f64,
}

impl DurationSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let ss: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
        Some(DurationSummary {
            count: n,
            mean,
            median,
            min: sorted[0],
            max: sorted[n - 1],
            std_population: (ss / n as f64).sqrt(),
            std_sample: if n > 1 {
                (ss / (n - 1) as f64).sqrt()
            } else {
                0.0
            },
        })
    }
}

/// One row of the per-category table. `category == None` is the "All" row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: Option<Category>,
    pub trope_count: usize,
    pub durations: Option<DurationSummary>,
}

impl CategoryStats {
    pub fn label(&self) -> &'static str {
        self.category.map_or("all", Category::name)
    }
}

fn duration_of(e: &Example) -> Result<f64> {
    match e.duration_seconds {
        Some(d) if d.is_finite() && d > 0.0 => Ok(d),
        Some(d) => Err(Error::Invalid(format!(
            "{} has non-positive duration {d}",
            e.video_id
        ))),
        None => Err(Error::Invalid(format!("{} has no duration", e.video_id))),
    }
}

/// Duration statistics for each of the eight categories followed by an
/// "All" row. A multi-category trope contributes to every one of its
/// categories.
pub fn category_stats(
    examples: &[Example],
    taxonomy: &Taxonomy,
    mode: StatsMode,
) -> Result<Vec<CategoryStats>> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut per_trope: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for e in examples {
        if taxonomy.get(e.trope_id).is_none() {
            return Err(Error::UnknownTrope(e.trope_id.to_string()));
        }
        per_trope.entry(e.trope_id).or_default().push(duration_of(e)?);
    }

    let samples_for = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
        match mode {
            StatsMode::PerExample => per_trope
                .iter()
                .filter(|(t, _)| keep(**t))
                .flat_map(|(_, d)| d.iter().copied())
                .collect(),
            StatsMode::PerTropeMean => per_trope
                .iter()
                .filter(|(t, _)| keep(**t))
                .map(|(_, d)| d.iter().sum::<f64>() / d.len() as f64)
                .collect(),
        }
    };

    let mut rows: Vec<CategoryStats> = Category::ALL
        .into_iter()
        .map(|category| {
            let values = samples_for(&|t| taxonomy.tropes()[t].categories.contains(&category));
            CategoryStats {
                category: Some(category),
                trope_count: taxonomy.trope_count(category),
                durations: DurationSummary::from_values(&values),
            }
        })
        .collect();
    rows.push(CategoryStats {
        category: None,
        trope_count: taxonomy.len(),
        durations: DurationSummary::from_values(&samples_for(&|_| true)),
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBuckets {
    pub short_count: usize,
    pub median_count: usize,
    pub long_count: usize,
    pub short_pct: f64,
    pub median_pct: f64,
    pub long_pct: f64,
}

/// Percentages of short (< 20 s), long (> 120 s) and in-between videos.
/// Exact boundary values land in the middle bucket.
pub fn length_buckets(examples: &[Example]) -> Result<LengthBuckets> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mut short, mut long) = (0usize, 0usize);
    for e in examples {
        let d = duration_of(e)?;
        if d < SHORT_THRESHOLD_SECS {
            short += 1;
        } else if d > LONG_THRESHOLD_SECS {
            long += 1;
        }
    }
    let n = examples.len();
    let median = n - short - long;
    let pct = |c: usize| 100.0 * c as f64 / n as f64;
    Ok(LengthBuckets {
        short_count: short,
        median_count: median,
        long_count: long,
        short_pct: pct(short),
        median_pct: pct(median),
        long_pct: pct(long),
    })
}

/// Fraction of tropes that belong to two or more categories.
pub fn multi_category_fraction(taxonomy: &Taxonomy) -> f64 {
    if taxonomy.is_empty() {
        return 0.0;
    }
    let multi = taxonomy
        .tropes()
        .iter()
        .filter(|t| t.categories.len() >= 2)
        .count();
    multi as f64 / taxonomy.len() as f64
}

/// Aligned text rendering of the category table.
pub fn render_category_table(rows: &[CategoryStats], verbose: bool) -> String {
    let mut out = String::new();
    write!(
        out,
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "category", "avg", "median", "min", "max", "std"
    )
    .unwrap();
    if verbose {
        write!(out, " {:>8} {:>6}", "std(n-1)", "n").unwrap();
    }
    writeln!(out, " {:>6}", "tropes").unwrap();
    for row in rows {
        write!(out, "{:<24}", row.label()).unwrap();
        match &row.durations {
            Some(s) => {
                write!(
                    out,
                    " {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                    s.mean, s.median, s.min, s.max, s.std_population
                )
                .unwrap();
                if verbose {
                    write!(out, " {:>8.2} {:>6}", s.std_sample, s.count).unwrap();
                }
            }
            None => {
                write!(out, " {:>8} {:>8} {:>8} {:>8} {:>8}", "-", "-", "-", "-", "-").unwrap();
                if verbose {
                    write!(out, " {:>8} {:>6}", "-", 0).unwrap();
                }
            }
        }
        writeln!(out, " {:>6}", row.trope_count).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaxonomyEntry;

    fn example(id: &str, trope: usize, d: f64) -> Example {
        Example {
            video_id: id.into(),
            trope_id: trope,
            description: None,
            asr_transcript: String::new(),
            duration_seconds: Some(d),
        }
    }

    fn taxonomy() -> Taxonomy {
        Taxonomy::new([
            TaxonomyEntry {
                trope: "a".into(),
                categories: vec![Category::Audio],
            },
            TaxonomyEntry {
                trope: "b".into(),
                categories: vec![Category::Audio, Category::Sentiment],
            },
        ])
        .unwrap()
    }

    #[test]
    fn single_example_category() {
        let rows = category_stats(&[example("v", 0, 10.0)], &taxonomy(), StatsMode::PerExample)
            .unwrap();
        let audio = rows
            .iter()
            .find(|r| r.category == Some(Category::Audio))
            .unwrap();
        let s = audio.durations.as_ref().unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (10.0, 10.0, 10.0, 10.0));
        assert_eq!(s.std_population, 0.0);
        assert_eq!(audio.trope_count, 2);
        let sentiment = rows
            .iter()
            .find(|r| r.category == Some(Category::Sentiment))
            .unwrap();
        assert!(sentiment.durations.is_none());
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[8].label(), "all");
    }

    #[test]
    fn even_median_and_per_trope_mode() {
        let ex = [
            example("1", 0, 10.0),
            example("2", 0, 30.0),
            example("3", 1, 40.0),
            example("4", 1, 100.0),
        ];
        let rows = category_stats(&ex, &taxonomy(), StatsMode::PerExample).unwrap();
        let all = rows[8].durations.as_ref().unwrap();
        assert_eq!(all.median, 35.0);
        assert_eq!(all.mean, 45.0);

        let rows = category_stats(&ex, &taxonomy(), StatsMode::PerTropeMean).unwrap();
        let all = rows[8].durations.as_ref().unwrap();
        assert_eq!(all.count, 2);
        assert_eq!(all.min, 20.0);
        assert_eq!(all.max, 70.0);
    }

    #[test]
    fn one_per_bucket() {
        let b = length_buckets(&[
            example("1", 0, 10.0),
            example("2", 0, 60.0),
            example("3", 0, 200.0),
        ])
        .unwrap();
        for p in [b.short_pct, b.median_pct, b.long_pct] {
            assert!((p - 100.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundaries_fall_in_middle() {
        let b = length_buckets(&[example("1", 0, 20.0), example("2", 0, 120.0)]).unwrap();
        assert_eq!(b.median_count, 2);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(length_buckets(&[]).is_err());
        assert!(category_stats(&[], &taxonomy(), StatsMode::PerExample).is_err());
    }

    #[test]
    fn missing_duration_errors() {
        let mut e = example("1", 0, 1.0);
        e.duration_seconds = None;
        assert!(length_buckets(&[e]).is_err());
    }

    #[test]
    fn multi_category() {
        assert_eq!(multi_category_fraction(&taxonomy()), 0.5);
        let single = Taxonomy::new([TaxonomyEntry {
            trope: "x".into(),
            categories: vec![Category::Audio],
        }])
        .unwrap();
        assert_eq!(multi_category_fraction(&single), 0.0);
    }

    #[test]
    fn table_renders_every_row() {
        let rows = category_stats(&[example("v", 1, 12.0)], &taxonomy(), StatsMode::PerExample)
            .unwrap();
        let text = render_category_table(&rows, true);
        assert_eq!(text.lines().count(), 10);
        assert!(text.contains("sentiment"));
    }
}
