//! The assembled model: stream encoders, optional storyteller, trope head,
//! and the joint loss with its gradient.

use ndarray::{s, Array1, Array2};

use crate::config::{ExperimentConfig, StoryInput};
use crate::encoder::{StreamEncoder, StreamSpec, StreamTrace, VideoEmbedding};
use crate::error::{Error, Result};
use crate::head::{argmax_trope, cross_entropy_grad, head_input, LossWeights, TropeDistribution};
use crate::nn::{Mlp2, Mlp2Trace, ParamBlock, ParamBlockMut, Parameterized};
use crate::storyteller::{story_loss_grad, tell_story_traced, StoryEmbedding};

/// One training/evaluation item: stream sequences in config order, the
/// ground-truth trope and the frozen description embedding when available.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub trope_id: usize,
    pub streams: Vec<Array2<f64>>,
    pub context: Option<Array1<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// `None` when the model has no storyteller or the sample has no
    /// description.
    pub story: Option<f64>,
    pub trope: f64,
    pub clamped: bool,
    /// Arg-max class of the prediction.
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrustModel {
    pub encoders: Vec<StreamEncoder>,
    pub storyteller: Option<Mlp2>,
    pub head: Mlp2,
    pub story_input: StoryInput,
}

/// Intermediate values of one forward pass.
pub struct ForwardPass {
    stream_traces: Vec<StreamTrace>,
    pub video: VideoEmbedding,
    story: Option<(StoryEmbedding, Mlp2Trace)>,
    head: Mlp2Trace,
}

impl ForwardPass {
    pub fn story(&self) -> Option<&StoryEmbedding> {
        self.story.as_ref().map(|(s, _)| s)
    }

    pub fn logits(&self) -> &Array1<f64> {
        &self.head.output
    }

    pub fn distribution(&self) -> TropeDistribution {
        TropeDistribution::from_logits(self.head.output.view())
    }
}

impl TrustModel {
    /// Zero-valued model shaped by `config` for `n_tropes` classes.
    pub fn zeros(config: &ExperimentConfig, n_tropes: usize) -> Self {
        let encoders: Vec<StreamEncoder> = config
            .streams
            .iter()
            .cloned()
            .map(StreamEncoder::zeros)
            .collect();
        let video_dim = config.video_dim();
        let storyteller = config.mode.has_storyteller().then(|| {
            Mlp2::zeros(
                video_dim,
                config.storyteller_hidden,
                config.context.dim,
                config.activation,
            )
        });
        let head_in = video_dim + if config.feeds_story() { config.context.dim } else { 0 };
        let story_input = if config.feeds_story() {
            config.story_input
        } else {
            StoryInput::Disabled
        };
        TrustModel {
            encoders,
            storyteller,
            head: Mlp2::zeros(head_in, config.classifier_hidden, n_tropes, config.activation),
            story_input,
        }
    }

    /// Deterministic initialization. Each block draws from its own stream
    /// keyed by `(seed, block name)`.
    pub fn init(config: &ExperimentConfig, n_tropes: usize, seed: u64) -> Self {
        let mut model = TrustModel::zeros(config, n_tropes);
        for e in &mut model.encoders {
            e.init(seed);
        }
        if let Some(st) = &mut model.storyteller {
            st.init(seed, "storyteller");
        }
        model.head.init(seed, "head");
        model
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for b in out.blocks_mut("") {
            b.data.fill(0.0);
        }
        out
    }

    pub fn n_tropes(&self) -> usize {
        self.head.output_dim()
    }

    pub fn stream_specs(&self) -> Vec<StreamSpec> {
        self.encoders.iter().map(|e| e.spec.clone()).collect()
    }

    pub fn video_dim(&self) -> usize {
        self.encoders.iter().map(StreamEncoder::output_dim).sum()
    }

    fn feeds_story(&self) -> bool {
        self.story_input != StoryInput::Disabled && self.storyteller.is_some()
    }

    pub fn forward(&self, sample: &Sample) -> Result<ForwardPass> {
        if sample.streams.len() != self.encoders.len() {
            return Err(Error::MissingStream(format!(
                "{}: model has {} streams, sample has {}",
                sample.video_id,
                self.encoders.len(),
                sample.streams.len()
            )));
        }
        let mut video = Array1::zeros(self.video_dim());
        let mut stream_traces = Vec::with_capacity(self.encoders.len());
        let mut offset = 0;
        for (enc, seq) in self.encoders.iter().zip(&sample.streams) {
            let (x, trace) = enc.encode_sequence(seq.view())?;
            video
                .slice_mut(s![offset..offset + x.len()])
                .assign(&x);
            offset += x.len();
            stream_traces.push(trace);
        }
        let story = match &self.storyteller {
            Some(st) => Some(tell_story_traced(video.view(), st)?),
            None => None,
        };
        let fed = if self.feeds_story() {
            story.as_ref().map(|(s, _)| s.0.view())
        } else {
            None
        };
        let input = head_input(video.view(), fed);
        if input.len() != self.head.input_dim() {
            return Err(Error::Dimension(format!(
                "trope head expects {} inputs, got {}",
                self.head.input_dim(),
                input.len()
            )));
        }
        let head = self.head.forward(input);
        Ok(ForwardPass {
            stream_traces,
            video: VideoEmbedding(video),
            story,
            head,
        })
    }

    pub fn predict(&self, sample: &Sample) -> Result<TropeDistribution> {
        Ok(self.forward(sample)?.distribution())
    }

    fn story_term(&self, pass: &ForwardPass, sample: &Sample) -> Result<Option<(f64, Array1<f64>)>> {
        match (&pass.story, &sample.context) {
            (Some((s, _)), Some(c)) => story_loss_grad(s.0.view(), c.view()).map(Some),
            _ => Ok(None),
        }
    }

    fn check_target(&self, sample: &Sample) -> Result<()> {
        if sample.trope_id >= self.n_tropes() {
            return Err(Error::Invalid(format!(
                "{}: trope id {} outside 0..{}",
                sample.video_id,
                sample.trope_id,
                self.n_tropes()
            )));
        }
        Ok(())
    }

    /// Forward-only loss.
    pub fn loss(&self, sample: &Sample, weights: LossWeights) -> Result<LossParts> {
        self.check_target(sample)?;
        let pass = self.forward(sample)?;
        let (trope, _, clamped) = cross_entropy_grad(pass.logits().view(), sample.trope_id);
        let story = self.story_term(&pass, sample)?.map(|(l, _)| l);
        Ok(LossParts {
            total: weights.alpha * story.unwrap_or(0.0) + weights.beta * trope,
            story,
            trope,
            clamped,
            predicted: argmax_trope(&pass.distribution()),
        })
    }

    /// Loss of one sample; its gradient is added into `grad`.
    pub fn accumulate_gradient(
        &self,
        sample: &Sample,
        weights: LossWeights,
        grad: &mut TrustModel,
    ) -> Result<LossParts> {
        self.check_target(sample)?;
        let pass = self.forward(sample)?;
        let (trope, mut dlogits, clamped) =
            cross_entropy_grad(pass.logits().view(), sample.trope_id);
        dlogits *= weights.beta;
        let story_term = self.story_term(&pass, sample)?;

        let d_input = self.head.backward(&pass.head, dlogits.view(), &mut grad.head);
        let video_dim = self.video_dim();
        let mut d_video = d_input.slice(s![..video_dim]).to_owned();

        if let (Some(st), Some((_, st_trace))) = (&self.storyteller, &pass.story) {
            let mut d_story = Array1::zeros(st.output_dim());
            if self.story_input == StoryInput::Attached {
                d_story += &d_input.slice(s![video_dim..]);
            }
            if let Some((_, g)) = &story_term {
                d_story.scaled_add(weights.alpha, g);
            }
            let grad_st = grad.storyteller.as_mut().expect("same layout");
            d_video += &st.backward(st_trace, d_story.view(), grad_st);
        }

        let mut offset = 0;
        for ((enc, trace), (seq, g)) in self
            .encoders
            .iter()
            .zip(&pass.stream_traces)
            .zip(sample.streams.iter().zip(grad.encoders.iter_mut()))
        {
            let width = enc.output_dim();
            enc.backward_sequence(
                seq.view(),
                trace,
                d_video.slice(s![offset..offset + width]),
                g,
            );
            offset += width;
        }

        let story = story_term.map(|(l, _)| l);
        Ok(LossParts {
            total: weights.alpha * story.unwrap_or(0.0) + weights.beta * trope,
            story,
            trope,
            clamped,
            predicted: argmax_trope(&pass.distribution()),
        })
    }

    /// `self += scale * other`, block by block.
    pub fn add_scaled(&mut self, other: &TrustModel, scale: f64) {
        for (dst, src) in self.blocks_mut("").into_iter().zip(other.blocks("")) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks("").iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

impl Parameterized for TrustModel {
    fn blocks(&self, _prefix: &str) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::new();
        for e in &self.encoders {
            out.extend(e.blocks(&e.prefix()));
        }
        if let Some(st) = &self.storyteller {
            out.extend(st.blocks("storyteller"));
        }
        out.extend(self.head.blocks("head"));
        out
    }

    fn blocks_mut(&mut self, _prefix: &str) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            let prefix = e.prefix();
            out.extend(e.blocks_mut(&prefix));
        }
        if let Some(st) = &mut self.storyteller {
            out.extend(st.blocks_mut("storyteller"));
        }
        out.extend(self.head.blocks_mut("head"));
        out
    }
}
