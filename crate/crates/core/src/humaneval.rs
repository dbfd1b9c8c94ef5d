//! Five-option multiple-choice questions with category-aware distractors.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Taxonomy};
use crate::error::{Error, Result};

pub const OPTION_COUNT: usize = 5;
pub const SAME_CATEGORY_DISTRACTORS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQuestion {
    pub video_id: String,
    pub options: Vec<usize>,
    pub answer_position: usize,
}

impl MCQuestion {
    pub fn answer(&self) -> usize {
        self.options[self.answer_position]
    }
}

/// A question that got fewer same-category distractors than requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub video_id: String,
    pub same_category: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<MCQuestion>,
    pub shortfalls: Vec<Shortfall>,
}

/// Samples `n` distinct examples and builds one question per example. Of the
/// four distractors, two share a category with the answer and two share
/// none; a short pool is topped up from the other one.
pub fn sample_questions(
    examples: &[Example],
    taxonomy: &Taxonomy,
    n: usize,
    seed: u64,
) -> Result<QuestionSet> {
    if n > examples.len() {
        return Err(Error::Invalid(format!(
            "asked for {n} questions from {} examples",
            examples.len()
        )));
    }
    if n == 0 {
        return Ok(QuestionSet::default());
    }
    if taxonomy.len() < OPTION_COUNT {
        return Err(Error::Invalid(format!(
            "taxonomy has {} tropes, need at least {OPTION_COUNT}",
            taxonomy.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&Example> = examples.choose_multiple(&mut rng, n).collect();
    let mut out = QuestionSet::default();
    for example in chosen {
        let answer = taxonomy
            .get(example.trope_id)
            .ok_or_else(|| Error::UnknownTrope(example.trope_id.to_string()))?;
        let (mut same, mut other): (Vec<usize>, Vec<usize>) = taxonomy
            .tropes()
            .iter()
            .filter(|t| t.id != answer.id)
            .map(|t| t.id)
            .partition(|&id| taxonomy.tropes()[id].shares_category(answer));
        same.shuffle(&mut rng);
        other.shuffle(&mut rng);

        let n_same = SAME_CATEGORY_DISTRACTORS.min(same.len());
        let n_other = (OPTION_COUNT - 1 - n_same).min(other.len());
        let mut options = vec![answer.id];
        options.extend_from_slice(&same[..n_same]);
        options.extend_from_slice(&other[..n_other]);
        let missing = OPTION_COUNT - options.len();
        options.extend_from_slice(&same[n_same..n_same + missing]);
        if n_same < SAME_CATEGORY_DISTRACTORS {
            out.shortfalls.push(Shortfall {
                video_id: example.video_id.clone(),
                same_category: n_same,
            });
        }
        options.shuffle(&mut rng);
        let answer_position = options.iter().position(|&o| o == answer.id).expect("answer kept");
        out.questions.push(MCQuestion {
            video_id: example.video_id.clone(),
            options,
            answer_position,
        });
    }
    Ok(out)
}

/// Spreadsheet-ready row with trope names in place of ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub video_id: String,
    pub options: Vec<String>,
    pub answer_position: usize,
    pub answer: String,
}

impl QuestionRecord {
    pub fn new(q: &MCQuestion, taxonomy: &Taxonomy) -> Self {
        let name = |id: usize| taxonomy.tropes()[id].name.clone();
        QuestionRecord {
            video_id: q.video_id.clone(),
            options: q.options.iter().map(|&o| name(o)).collect(),
            answer_position: q.answer_position,
            answer: name(q.answer()),
        }
    }
}
