use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Example, ExampleRecord, Taxonomy};
use crate::error::{Error, Result};

pub const FOLD_COUNT: usize = 5;

/// Share of the non-test examples held out for validation (10% of the
/// whole corpus, giving a 7:1:2 train/val/test ratio).
pub const VAL_FRACTION: f64 = 0.125;

const MIN_DERIVE_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold_index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldRun {
    pub fn ids(&self, kind: SplitKind) -> &[String] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when no id appears twice across train, val and test.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.len());
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .all(|id| seen.insert(id))
    }
}

/// Examples of a corpus together with its five fold partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub examples: Vec<Example>,
    pub folds: Vec<FoldRun>,
}

impl SplitSet {
    pub fn example_index(&self) -> HashMap<&str, &Example> {
        self.examples
            .iter()
            .map(|e| (e.video_id.as_str(), e))
            .collect()
    }

    /// Examples of one fold side, in the fold's listed order.
    pub fn select(&self, fold: &FoldRun, kind: SplitKind) -> Vec<Example> {
        let index = self.example_index();
        fold.ids(kind)
            .iter()
            .filter_map(|id| index.get(id.as_str()).map(|e| (*e).clone()))
            .collect()
    }
}

pub fn fold_file(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold_{fold}.jsonl"))
}

/// Loads the five fold files `fold_0.jsonl` .. `fold_4.jsonl` from `dir`.
pub fn load_splits(dir: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<SplitSet> {
    let dir = dir.as_ref();
    let mut examples: BTreeMap<String, Example> = BTreeMap::new();
    let mut test_owner: HashMap<String, usize> = HashMap::new();
    let mut folds = Vec::with_capacity(FOLD_COUNT);

    for fold_index in 0..FOLD_COUNT {
        let path = fold_file(dir, fold_index);
        if !path.is_file() {
            return Err(Error::MissingFold(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut fold = FoldRun {
            fold_index,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        let mut in_fold = HashSet::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ExampleRecord = serde_json::from_str(line)
                .map_err(|e| Error::format(&path, format!("line {}: {e}", line_no + 1)))?;
            let kind = record.split.ok_or_else(|| {
                Error::format(&path, format!("line {}: missing split", line_no + 1))
            })?;
            let example = record.into_example(taxonomy)?;
            let id = example.video_id.clone();
            if !in_fold.insert(id.clone()) {
                return Err(Error::DuplicateVideo(id));
            }
            if kind == SplitKind::Test && test_owner.insert(id.clone(), fold_index).is_some() {
                return Err(Error::DuplicateVideo(id));
            }
            match examples.get(&id) {
                Some(prev) if prev.trope_id != example.trope_id => {
                    return Err(Error::Invalid(format!(
                        "{id} has different tropes in different fold files"
                    )));
                }
                Some(_) => {}
                None => {
                    examples.insert(id.clone(), example);
                }
            }
            match kind {
                SplitKind::Train => fold.train.push(id),
                SplitKind::Val => fold.val.push(id),
                SplitKind::Test => fold.test.push(id),
            }
        }
        folds.push(fold);
    }

    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(SplitSet {
        examples: examples.into_values().collect(),
        folds,
    })
}

/// Writes one `fold_<i>.jsonl` file per fold, listing train, val then test.
pub fn write_splits(dir: impl AsRef<Path>, set: &SplitSet, taxonomy: &Taxonomy) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index = set.example_index();
    for fold in &set.folds {
        let path = fold_file(dir, fold.fold_index);
        let mut out = String::new();
        for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
            for id in fold.ids(kind) {
                let example = index
                    .get(id.as_str())
                    .ok_or_else(|| Error::Invalid(format!("fold lists unknown id {id}")))?;
                let record = ExampleRecord::from_example(example, taxonomy, kind);
                let line =
                    serde_json::to_string(&record).map_err(|e| Error::format(&path, e.to_string()))?;
                writeln!(out, "{line}").unwrap();
            }
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Builds five folds for a corpus that has no released split files.
///
/// Test sets are dealt round-robin within each trope so every fold gets a
/// near-equal, trope-balanced share. Within a fold, a trope-stratified
/// `VAL_FRACTION` of the remaining examples becomes validation.
pub fn derive_fold_runs(examples: &[Example], seed: u64) -> Result<Vec<FoldRun>> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if examples.len() < MIN_DERIVE_SIZE {
        return Err(Error::Invalid(format!(
            "corpus has {} examples, need at least {MIN_DERIVE_SIZE}",
            examples.len()
        )));
    }
    let mut seen = HashSet::with_capacity(examples.len());
    for e in examples {
        if !seen.insert(e.video_id.as_str()) {
            return Err(Error::DuplicateVideo(e.video_id.clone()));
        }
    }

    let mut by_trope: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for e in examples {
        by_trope.entry(e.trope_id).or_default().push(&e.video_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ids in by_trope.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
    }

    let mut test_fold: HashMap<&str, usize> = HashMap::with_capacity(examples.len());
    let mut next = 0usize;
    for ids in by_trope.values() {
        for id in ids {
            test_fold.insert(id, next % FOLD_COUNT);
            next += 1;
        }
    }

    let mut folds = Vec::with_capacity(FOLD_COUNT);
    for fold_index in 0..FOLD_COUNT {
        let mut fold_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(fold_index as u64 + 1)));
        let mut test = Vec::new();
        let mut pools: Vec<Vec<&str>> = Vec::with_capacity(by_trope.len());
        for ids in by_trope.values() {
            let mut pool = Vec::new();
            for &id in ids {
                if test_fold[id] == fold_index {
                    test.push(id.to_string());
                } else {
                    pool.push(id);
                }
            }
            pool.sort_unstable();
            pool.shuffle(&mut fold_rng);
            pools.push(pool);
        }
        let non_test: usize = pools.iter().map(Vec::len).sum();
        let target = (VAL_FRACTION * non_test as f64).round() as usize;
        let quotas = stratified_quotas(&pools.iter().map(Vec::len).collect::<Vec<_>>(), target);

        let mut train = Vec::new();
        let mut val = Vec::new();
        for (pool, quota) in pools.iter().zip(quotas) {
            val.extend(pool[..quota].iter().map(|s| s.to_string()));
            train.extend(pool[quota..].iter().map(|s| s.to_string()));
        }
        train.sort();
        val.sort();
        test.sort();
        folds.push(FoldRun {
            fold_index,
            train,
            val,
            test,
        });
    }
    Ok(folds)
}

/// Largest-remainder allocation of `target` items proportionally to `sizes`.
fn stratified_quotas(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&n| n as f64 * target as f64 / total as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = target - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if remaining == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            remaining -= 1;
        }
    }
    quotas
}
