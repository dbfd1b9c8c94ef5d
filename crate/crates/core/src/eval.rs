//! Accuracy reports, per-category breakdowns and cross-validation summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{Category, Example, SplitKind, SplitSet, Taxonomy, FOLD_COUNT};
use crate::error::{Error, Result};
use crate::train::{evaluate_samples, fit, Checkpoint, EpochRecord, SampleSet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub correct: usize,
    pub count: usize,
}

impl CategoryAccuracy {
    /// `None` for a category without examples.
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_category: BTreeMap<Category, CategoryAccuracy>,
    pub predictions: BTreeMap<String, usize>,
}

/// Accuracy per category over examples whose ground-truth trope belongs to
/// it. A multi-category trope counts toward each of its categories. All
/// eight categories are present; unpopulated ones have `count == 0`.
pub fn per_category_accuracy(
    predictions: &BTreeMap<String, usize>,
    examples: &[Example],
    taxonomy: &Taxonomy,
) -> Result<BTreeMap<Category, CategoryAccuracy>> {
    let mut out: BTreeMap<Category, CategoryAccuracy> =
        Category::ALL.into_iter().map(|c| (c, CategoryAccuracy::default())).collect();
    for e in examples {
        let label = taxonomy
            .get(e.trope_id)
            .ok_or_else(|| Error::UnknownTrope(e.trope_id.to_string()))?;
        let Some(&pred) = predictions.get(&e.video_id) else {
            continue;
        };
        for c in &label.categories {
            let entry = out.get_mut(c).expect("all categories present");
            entry.count += 1;
            if pred == e.trope_id {
                entry.correct += 1;
            }
        }
    }
    Ok(out)
}

/// Builds a report from already-made predictions.
pub fn report_from_predictions(
    predictions: BTreeMap<String, usize>,
    examples: &[Example],
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    let mut correct = 0;
    for e in examples {
        let pred = predictions.get(&e.video_id).ok_or_else(|| {
            Error::Invalid(format!("no prediction for {}", e.video_id))
        })?;
        if *pred == e.trope_id {
            correct += 1;
        }
    }
    let total = examples.len();
    Ok(EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        per_category: per_category_accuracy(&predictions, examples, taxonomy)?,
        predictions,
    })
}

/// Predicts every example with the checkpoint and scores exact matches.
pub fn evaluate_split(
    checkpoint: &Checkpoint,
    examples: &[Example],
    samples: &SampleSet,
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    if checkpoint.n_tropes != taxonomy.len() {
        return Err(Error::Config(format!(
            "checkpoint predicts {} tropes, taxonomy has {}",
            checkpoint.n_tropes,
            taxonomy.len()
        )));
    }
    let ids: Vec<String> = examples.iter().map(|e| e.video_id.clone()).collect();
    let selected = samples.select(&ids)?;
    let pass = evaluate_samples(&checkpoint.model, &selected, &checkpoint.config)?;
    let predictions = ids.into_iter().zip(pass.predictions).collect();
    report_from_predictions(predictions, examples, taxonomy)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub folds: usize,
}

impl MeanStd {
    pub fn of(values: &[f64], kind: StdKind) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let denom = match kind {
            StdKind::Population => n,
            StdKind::Sample => (n - 1.0).max(1.0),
        };
        Some(MeanStd {
            mean,
            std: (ss / denom).sqrt(),
            folds: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalSummary {
    pub overall: MeanStd,
    /// Mean of per-fold category accuracies over folds where the category
    /// has test examples.
    pub per_category: BTreeMap<Category, Option<MeanStd>>,
    pub fold_accuracies: Vec<f64>,
}

pub fn crossval_summary(reports: &[EvalReport], kind: StdKind) -> Result<CrossvalSummary> {
    if reports.len() != FOLD_COUNT {
        return Err(Error::Invalid(format!(
            "expected {FOLD_COUNT} fold reports, got {}",
            reports.len()
        )));
    }
    let fold_accuracies: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let per_category = Category::ALL
        .into_iter()
        .map(|c| {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.per_category.get(&c).and_then(CategoryAccuracy::accuracy))
                .collect();
            (c, MeanStd::of(&values, kind))
        })
        .collect();
    Ok(CrossvalSummary {
        overall: MeanStd::of(&fold_accuracies, kind).expect("five folds"),
        per_category,
        fold_accuracies,
    })
}

/// Table row with overall and per-category `mean ± std` in percent.
pub fn render_summary_table(rows: &[(String, CrossvalSummary)]) -> String {
    let mut out = String::new();
    write!(out, "{:<16} {:>14}", "method", "5-fold acc").unwrap();
    for c in Category::ALL {
        write!(out, " {:>14}", c.short_name()).unwrap();
    }
    out.push('\n');
    let cell = |m: Option<&MeanStd>| match m {
        Some(m) => format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std),
        None => "-".to_string(),
    };
    for (name, summary) in rows {
        write!(out, "{:<16} {:>14}", name, cell(Some(&summary.overall))).unwrap();
        for c in Category::ALL {
            write!(out, " {:>14}", cell(summary.per_category[&c].as_ref())).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Everything produced by training and testing one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
    pub log: Vec<EpochRecord>,
}

/// Trains and tests all five folds, in parallel.
pub fn run_crossval(
    splits: &SplitSet,
    samples: &SampleSet,
    config: &ExperimentConfig,
    taxonomy: &Taxonomy,
    std_kind: StdKind,
) -> Result<(Vec<FoldResult>, CrossvalSummary)> {
    let results: Vec<FoldResult> = splits
        .folds
        .par_iter()
        .map(|fold| {
            let mut log = Vec::new();
            let checkpoint = fit(fold, samples, config, taxonomy.len(), &mut |r| log.push(r.clone()))?;
            let test = splits.select(fold, SplitKind::Test);
            let report = evaluate_split(&checkpoint, &test, samples, taxonomy)?;
            Ok(FoldResult {
                checkpoint,
                report,
                log,
            })
        })
        .collect::<Result<_>>()?;
    let reports: Vec<EvalReport> = results.iter().map(|r| r.report.clone()).collect();
    let summary = crossval_summary(&reports, std_kind)?;
    Ok((results, summary))
}
