//! Multi-stream video encoder: one bidirectional LSTM per modality, final
//! states concatenated per stream and streams concatenated in config order.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, ModalityFeature};
use crate::error::{Error, Result};
use crate::nn::{
    block1, block1_mut, block2, block2_mut, block_rng, fill_uniform, sigmoid, ParamBlock,
    ParamBlockMut, Parameterized,
};

pub const DEFAULT_HIDDEN_DIM: usize = 256;

/// Declared stream: which modality, its input width and LSTM width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub modality: Modality,
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN_DIM
}

impl StreamSpec {
    pub fn new(modality: Modality, input_dim: usize, hidden_dim: usize) -> Self {
        StreamSpec {
            modality,
            input_dim,
            hidden_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

/// Single-direction LSTM cell weights. Gate rows are ordered input, forget,
/// cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Everything the backward pass needs from one forward run.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// Post-activation gates, `[T x 4H]`.
    gates: Array2<f64>,
    /// Cell states, row `t + 1` is `c_t`; row 0 is the zero initial state.
    cells: Array2<f64>,
    /// Hidden states, same indexing as `cells`.
    hiddens: Array2<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn init(&mut self, seed: u64, prefix: &str) {
        let bound = 1.0 / (self.hidden_dim().max(1) as f64).sqrt();
        for (name, data) in [
            ("w_ih", self.w_ih.as_slice_mut().unwrap()),
            ("w_hh", self.w_hh.as_slice_mut().unwrap()),
            ("bias", self.bias.as_slice_mut().unwrap()),
        ] {
            fill_uniform(data, bound, &mut block_rng(seed, &format!("{prefix}.{name}")));
        }
    }

    /// Runs the recurrence over `x` (`[T x D]`, T >= 1) and returns the final
    /// hidden state.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array1<f64>, LstmTrace) {
        let t_len = x.nrows();
        let h = self.hidden_dim();
        let input_proj = x.dot(&self.w_ih.t()) + &self.bias;
        let mut gates = Array2::<f64>::zeros((t_len, 4 * h));
        let mut cells = Array2::<f64>::zeros((t_len + 1, h));
        let mut hiddens = Array2::<f64>::zeros((t_len + 1, h));
        for t in 0..t_len {
            let mut z = input_proj.row(t).to_owned();
            z += &self.w_hh.dot(&hiddens.row(t));
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sigmoid(z[3 * h + k]);
                let c = f * cells[(t, k)] + i * g;
                gates[(t, k)] = i;
                gates[(t, h + k)] = f;
                gates[(t, 2 * h + k)] = g;
                gates[(t, 3 * h + k)] = o;
                cells[(t + 1, k)] = c;
                hiddens[(t + 1, k)] = o * c.tanh();
            }
        }
        let last = hiddens.row(t_len).to_owned();
        (
            last,
            LstmTrace {
                gates,
                cells,
                hiddens,
            },
        )
    }

    /// Backpropagates `dh_last` through time, accumulating into `grad`.
    /// Returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        trace: &LstmTrace,
        dh_last: ArrayView1<f64>,
        grad: &mut Lstm,
    ) -> Array2<f64> {
        let t_len = x.nrows();
        let h = self.hidden_dim();
        let mut dz_all = Array2::zeros((t_len, 4 * h));
        let mut dh = dh_last.to_owned();
        let mut dc = Array1::<f64>::zeros(h);
        for t in (0..t_len).rev() {
            let mut dz = dz_all.row_mut(t);
            for k in 0..h {
                let i = trace.gates[(t, k)];
                let f = trace.gates[(t, h + k)];
                let g = trace.gates[(t, 2 * h + k)];
                let o = trace.gates[(t, 3 * h + k)];
                let c = trace.cells[(t + 1, k)];
                let c_prev = trace.cells[(t, k)];
                let tc = c.tanh();
                let d_o = dh[k] * tc;
                let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
                dz[k] = d_c * g * i * (1.0 - i);
                dz[h + k] = d_c * c_prev * f * (1.0 - f);
                dz[2 * h + k] = d_c * i * (1.0 - g * g);
                dz[3 * h + k] = d_o * o * (1.0 - o);
                dc[k] = d_c * f;
            }
            dh = self.w_hh.t().dot(&dz);
        }
        let h_prev = trace.hiddens.slice(s![..t_len, ..]);
        grad.w_ih += &dz_all.t().dot(&x);
        grad.w_hh += &dz_all.t().dot(&h_prev);
        grad.bias += &dz_all.sum_axis(Axis(0));
        dz_all.dot(&self.w_ih)
    }
}

/// Bidirectional LSTM for one modality stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEncoder {
    pub spec: StreamSpec,
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct StreamTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
}

impl StreamEncoder {
    pub fn zeros(spec: StreamSpec) -> Self {
        StreamEncoder {
            forward: Lstm::zeros(spec.input_dim, spec.hidden_dim),
            backward: Lstm::zeros(spec.input_dim, spec.hidden_dim),
            spec,
        }
    }

    pub fn modality(&self) -> Modality {
        self.spec.modality
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn prefix(&self) -> String {
        format!("encoder.{}", self.spec.modality)
    }

    pub fn init(&mut self, seed: u64) {
        let prefix = self.prefix();
        self.forward.init(seed, &format!("{prefix}.fwd"));
        self.backward.init(seed, &format!("{prefix}.bwd"));
    }

    fn check_input(&self, seq: ArrayView2<f64>) -> Result<()> {
        if seq.nrows() == 0 {
            return Err(Error::EmptySequence(self.spec.modality.to_string()));
        }
        if seq.ncols() != self.spec.input_dim {
            return Err(Error::Dimension(format!(
                "{} stream expects input dim {}, got {}",
                self.spec.modality,
                self.spec.input_dim,
                seq.ncols()
            )));
        }
        Ok(())
    }

    /// Encodes a `[T x D]` sequence into `[h_fwd_last; h_bwd_last]`.
    pub fn encode_sequence(&self, seq: ArrayView2<f64>) -> Result<(Array1<f64>, StreamTrace)> {
        self.check_input(seq)?;
        let reversed = seq.slice(s![..;-1, ..]);
        let (hf, fwd) = self.forward.forward(seq);
        let (hb, bwd) = self.backward.forward(reversed);
        Ok((concatenate![Axis(0), hf, hb], StreamTrace { fwd, bwd }))
    }

    pub fn backward_sequence(
        &self,
        seq: ArrayView2<f64>,
        trace: &StreamTrace,
        dout: ArrayView1<f64>,
        grad: &mut StreamEncoder,
    ) -> Array2<f64> {
        let h = self.spec.hidden_dim;
        let reversed = seq.slice(s![..;-1, ..]);
        let mut dx = self
            .forward
            .backward(seq, &trace.fwd, dout.slice(s![..h]), &mut grad.forward);
        let dx_rev = self
            .backward
            .backward(reversed, &trace.bwd, dout.slice(s![h..]), &mut grad.backward);
        dx += &dx_rev.slice(s![..;-1, ..]);
        dx
    }
}

impl Parameterized for StreamEncoder {
    fn blocks(&self, prefix: &str) -> Vec<ParamBlock<'_>> {
        let mut out = Vec::with_capacity(6);
        for (dir, lstm) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            let p = format!("{prefix}.{dir}");
            out.push(block2(&p, "w_ih", &lstm.w_ih));
            out.push(block2(&p, "w_hh", &lstm.w_hh));
            out.push(block1(&p, "bias", &lstm.bias));
        }
        out
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<ParamBlockMut<'_>> {
        let mut out = Vec::with_capacity(6);
        for (dir, lstm) in [("fwd", &mut self.forward), ("bwd", &mut self.backward)] {
            let p = format!("{prefix}.{dir}");
            out.push(block2_mut(&p, "w_ih", &mut lstm.w_ih));
            out.push(block2_mut(&p, "w_hh", &mut lstm.w_hh));
            out.push(block1_mut(&p, "bias", &mut lstm.bias));
        }
        out
    }
}

/// Concatenation of all stream embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding(pub Array1<f64>);

impl VideoEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Encodes one modality feature into a fixed-size vector.
pub fn encode_modality(feature: &ModalityFeature, encoder: &StreamEncoder) -> Result<Array1<f64>> {
    if feature.modality != encoder.modality() {
        return Err(Error::Dimension(format!(
            "feature is {}, stream expects {}",
            feature.modality,
            encoder.modality()
        )));
    }
    let seq = feature.to_sequence();
    encoder.encode_sequence(seq.view()).map(|(x, _)| x)
}

/// Encodes every configured stream and concatenates them in stream order.
pub fn encode_video(
    features: &HashMap<Modality, ModalityFeature>,
    encoders: &[StreamEncoder],
) -> Result<VideoEmbedding> {
    if let Some(extra) = features
        .keys()
        .find(|m| !encoders.iter().any(|e| e.modality() == **m))
    {
        return Err(Error::ExtraStream(extra.to_string()));
    }
    let mut parts = Vec::with_capacity(encoders.len());
    for encoder in encoders {
        let feature = features
            .get(&encoder.modality())
            .ok_or_else(|| Error::MissingStream(encoder.modality().to_string()))?;
        parts.push(encode_modality(feature, encoder)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(VideoEmbedding(
        concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_encoder(modality: Modality, input: usize, hidden: usize, seed: u64) -> StreamEncoder {
        let mut e = StreamEncoder::zeros(StreamSpec::new(modality, input, hidden));
        e.init(seed);
        e
    }

    fn feature(modality: Modality, t: usize, d: usize) -> ModalityFeature {
        let data = (0..t * d).map(|i| ((i * 7 % 11) as f32 - 5.0) / 10.0).collect();
        ModalityFeature::new(modality, vec![t, d], data).unwrap()
    }

    /// Straight-line LSTM cell written without any of the vectorized code.
    fn manual_lstm(l: &Lstm, xs: &[Vec<f64>]) -> Vec<f64> {
        let h = l.hidden_dim();
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for x in xs {
            let mut z = vec![0.0; 4 * h];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut acc = l.bias[r];
                for (c, xv) in x.iter().enumerate() {
                    acc += l.w_ih[(r, c)] * xv;
                }
                for (c, hv) in hs.iter().enumerate() {
                    acc += l.w_hh[(r, c)] * hv;
                }
                *zr = acc;
            }
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut next_h = vec![0.0; h];
            for k in 0..h {
                let i = sig(z[k]);
                let f = sig(z[h + k]);
                let g = z[2 * h + k].tanh();
                let o = sig(z[3 * h + k]);
                cs[k] = f * cs[k] + i * g;
                next_h[k] = o * cs[k].tanh();
            }
            hs = next_h;
        }
        hs
    }

    #[test]
    fn motion_output_is_twice_hidden() {
        let e = tiny_encoder(Modality::Motion, 1024, 256, 0);
        let x = encode_modality(&feature(Modality::Motion, 38, 1024), &e).unwrap();
        assert_eq!(x.len(), 512);
    }

    #[test]
    fn encoding_is_deterministic() {
        let e = tiny_encoder(Modality::Sound, 6, 4, 3);
        let f = feature(Modality::Sound, 9, 6);
        assert_eq!(encode_modality(&f, &e).unwrap(), encode_modality(&f, &e).unwrap());
    }

    #[test]
    fn hand_set_two_step_recurrence() {
        let mut e = StreamEncoder::zeros(StreamSpec::new(Modality::Motion, 3, 2));
        let fill = |a: &mut [f64], offset: f64| {
            for (i, v) in a.iter_mut().enumerate() {
                *v = ((i as f64 + offset) * 0.37).sin() * 0.5;
            }
        };
        fill(e.forward.w_ih.as_slice_mut().unwrap(), 0.0);
        fill(e.forward.w_hh.as_slice_mut().unwrap(), 1.0);
        fill(e.forward.bias.as_slice_mut().unwrap(), 2.0);
        fill(e.backward.w_ih.as_slice_mut().unwrap(), 3.0);
        fill(e.backward.w_hh.as_slice_mut().unwrap(), 4.0);
        fill(e.backward.bias.as_slice_mut().unwrap(), 5.0);
        let x = array![[0.5f32, -1.0, 0.25], [1.5, 0.0, -0.75]];
        let f = ModalityFeature::from_rows(Modality::Motion, &x).unwrap();
        let out = encode_modality(&f, &e).unwrap();

        let rows: Vec<Vec<f64>> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        let mut rev = rows.clone();
        rev.reverse();
        let mut expected = manual_lstm(&e.forward, &rows);
        expected.extend(manual_lstm(&e.backward, &rev));
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn video_embedding_is_concatenation() {
        let encoders = vec![
            tiny_encoder(Modality::Motion, 4, 3, 1),
            tiny_encoder(Modality::Asr, 5, 2, 1),
            tiny_encoder(Modality::Sound, 2, 4, 1),
        ];
        let feats: HashMap<_, _> = [
            (Modality::Sound, feature(Modality::Sound, 3, 2)),
            (Modality::Motion, feature(Modality::Motion, 7, 4)),
            (Modality::Asr, feature(Modality::Asr, 2, 5)),
        ]
        .into_iter()
        .collect();
        let v = encode_video(&feats, &encoders).unwrap();
        assert_eq!(v.dim(), 6 + 4 + 8);
        let mut expected = Vec::new();
        for e in &encoders {
            expected.extend(encode_modality(&feats[&e.modality()], e).unwrap());
        }
        assert_eq!(v.0.to_vec(), expected);
    }

    #[test]
    fn single_stream_is_identity_concat() {
        let encoders = vec![tiny_encoder(Modality::Motion, 4, 3, 1)];
        let f = feature(Modality::Motion, 5, 4);
        let feats: HashMap<_, _> = [(Modality::Motion, f.clone())].into_iter().collect();
        let v = encode_video(&feats, &encoders).unwrap();
        assert_eq!(v.0, encode_modality(&f, &encoders[0]).unwrap());
    }

    #[test]
    fn missing_and_extra_streams() {
        let encoders = vec![tiny_encoder(Modality::Motion, 4, 3, 1)];
        let empty = HashMap::new();
        assert!(matches!(encode_video(&empty, &encoders), Err(Error::MissingStream(_))));
        let feats: HashMap<_, _> = [
            (Modality::Motion, feature(Modality::Motion, 5, 4)),
            (Modality::Sound, feature(Modality::Sound, 5, 4)),
        ]
        .into_iter()
        .collect();
        assert!(matches!(encode_video(&feats, &encoders), Err(Error::ExtraStream(_))));
    }

    #[test]
    fn wrong_dim_and_empty_sequence() {
        let e = tiny_encoder(Modality::Motion, 4, 3, 1);
        assert!(matches!(
            encode_modality(&feature(Modality::Motion, 5, 3), &e),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            encode_modality(&feature(Modality::Motion, 0, 4), &e),
            Err(Error::EmptySequence(_))
        ));
        assert!(encode_modality(&feature(Modality::Sound, 2, 4), &e).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let e = tiny_encoder(Modality::Motion, 3, 4, 9);
        let seq = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.7).cos());
        let probe = |x: &Array2<f64>| e.encode_sequence(x.view()).unwrap().0.sum();
        let (_, trace) = e.encode_sequence(seq.view()).unwrap();
        let mut grad = StreamEncoder::zeros(e.spec.clone());
        let ones = Array1::ones(e.output_dim());
        let dx = e.backward_sequence(seq.view(), &trace, ones.view(), &mut grad);
        let step = 1e-5;
        for idx in [(0, 0), (1, 2), (3, 1)] {
            let mut plus = seq.clone();
            plus[idx] += step;
            let mut minus = seq.clone();
            minus[idx] -= step;
            let numeric = (probe(&plus) - probe(&minus)) / (2.0 * step);
            assert!((numeric - dx[idx]).abs() < 1e-7, "{numeric} vs {}", dx[idx]);
        }
    }
}
