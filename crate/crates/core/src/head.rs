//! Trope classifier over `[V; S]`, cross-entropy and the weighted total loss.

use ndarray::{concatenate, Array1, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::VideoEmbedding;
use crate::error::{Error, Result};
use crate::nn::Mlp2;
use crate::storyteller::StoryEmbedding;

/// Lower clamp on the ground-truth probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Normalized class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TropeDistribution(pub Array1<f64>);

impl TropeDistribution {
    pub fn from_logits(logits: ArrayView1<f64>) -> Self {
        TropeDistribution(softmax(logits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|&p| p >= 0.0 && p.is_finite()) && (self.0.sum() - 1.0).abs() <= tol
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let total = exp.sum();
    exp / total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config("alpha and beta must be finite and non-negative".into()));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::Config("alpha and beta cannot both be zero".into()));
        }
        Ok(())
    }
}

pub(crate) fn head_input(v: ArrayView1<f64>, s: Option<ArrayView1<f64>>) -> Array1<f64> {
    match s {
        Some(s) => concatenate![Axis(0), v, s],
        None => v.to_owned(),
    }
}

/// Trope distribution for a video embedding and, when the head was built
/// to consume it, a story embedding.
pub fn predict_trope(
    v: &VideoEmbedding,
    s: Option<&StoryEmbedding>,
    head: &Mlp2,
) -> Result<TropeDistribution> {
    let input = head_input(v.0.view(), s.map(|s| s.0.view()));
    if input.len() != head.input_dim() {
        return Err(Error::Dimension(format!(
            "trope head expects {} inputs, got {}",
            head.input_dim(),
            input.len()
        )));
    }
    let trace = head.forward(input);
    Ok(TropeDistribution::from_logits(trace.output.view()))
}

/// `-ln p[gt]`, with `p[gt]` clamped below at [`PROB_FLOOR`].
pub fn trope_loss(t_gt: usize, t_pred: &TropeDistribution) -> Result<f64> {
    let p = *t_pred.0.get(t_gt).ok_or_else(|| {
        Error::Invalid(format!("trope id {t_gt} outside 0..{}", t_pred.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Whether [`trope_loss`] would clamp for this prediction.
pub fn trope_loss_clamped(t_gt: usize, t_pred: &TropeDistribution) -> bool {
    t_pred.0.get(t_gt).is_some_and(|&p| p < PROB_FLOOR)
}

pub fn total_loss(l_s: f64, l_t: f64, w: LossWeights) -> f64 {
    w.alpha * l_s + w.beta * l_t
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax_trope(t_pred: &TropeDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in t_pred.0.iter().enumerate() {
        if p > t_pred.0[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy loss and its gradient with respect to the logits.
pub(crate) fn cross_entropy_grad(logits: ArrayView1<f64>, t_gt: usize) -> (f64, Array1<f64>, bool) {
    let probs = softmax(logits);
    let p = probs[t_gt];
    if !logits.iter().all(|v| v.is_finite()) {
        return (f64::NAN, Array1::zeros(probs.len()), false);
    }
    if p < PROB_FLOOR {
        return (-PROB_FLOOR.ln(), Array1::zeros(probs.len()), true);
    }
    let mut grad = probs;
    grad[t_gt] -= 1.0;
    (-p.ln(), grad, false)
}
