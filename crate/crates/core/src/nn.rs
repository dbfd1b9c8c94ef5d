//! Dense layers with hand-written backward passes, plus the parameter-block
//! plumbing shared by every trainable component.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A named, flat view of one trainable tensor.
#[derive(Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct ParamBlockMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Anything that owns trainable tensors. Blocks are always listed in the
/// same order, which is what optimizers and checkpoints rely on.
pub trait Parameterized {
    fn blocks(&self, prefix: &str) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self, prefix: &str) -> Vec<ParamBlockMut<'_>>;
}

pub(crate) fn block1<'a>(prefix: &str, name: &str, a: &'a Array1<f64>) -> ParamBlock<'a> {
    ParamBlock {
        name: format!("{prefix}.{name}"),
        shape: vec![a.len()],
        data: a.as_slice().expect("standard layout"),
    }
}

pub(crate) fn block2<'a>(prefix: &str, name: &str, a: &'a Array2<f64>) -> ParamBlock<'a> {
    ParamBlock {
        name: format!("{prefix}.{name}"),
        shape: vec![a.nrows(), a.ncols()],
        data: a.as_slice().expect("standard layout"),
    }
}

pub(crate) fn block1_mut<'a>(prefix: &str, name: &str, a: &'a mut Array1<f64>) -> ParamBlockMut<'a> {
    ParamBlockMut {
        name: format!("{prefix}.{name}"),
        shape: vec![a.len()],
        data: a.as_slice_mut().expect("standard layout"),
    }
}

pub(crate) fn block2_mut<'a>(prefix: &str, name: &str, a: &'a mut Array2<f64>) -> ParamBlockMut<'a> {
    let shape = vec![a.nrows(), a.ncols()];
    ParamBlockMut {
        name: format!("{prefix}.{name}"),
        shape,
        data: a.as_slice_mut().expect("standard layout"),
    }
}

/// Deterministic RNG for one parameter block, derived from the run seed and
/// the block name so that shared blocks initialize identically across
/// model variants.
pub fn block_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

pub fn fill_uniform(data: &mut [f64], bound: f64, rng: &mut impl Rng) {
    for v in data {
        *v = rng.random_range(-bound..=bound);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 || x.is_nan() {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `y = W x + b` with `W` stored as `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView1<f64>, dy: ArrayView1<f64>, grad: &mut Dense) -> Array1<f64> {
        for (mut row, &g) in grad.weight.rows_mut().into_iter().zip(dy.iter()) {
            if g != 0.0 {
                row.scaled_add(g, &x);
            }
        }
        grad.bias += &dy;
        self.weight.t().dot(&dy)
    }

    pub fn init(&mut self, seed: u64, prefix: &str) {
        let bound = 1.0 / (self.input_dim().max(1) as f64).sqrt();
        let w = format!("{prefix}.weight");
        let b = format!("{prefix}.bias");
        fill_uniform(self.weight.as_slice_mut().unwrap(), bound, &mut block_rng(seed, &w));
        fill_uniform(self.bias.as_slice_mut().unwrap(), bound, &mut block_rng(seed, &b));
    }
}

impl Parameterized for Dense {
    fn blocks(&self, prefix: &str) -> Vec<ParamBlock<'_>> {
        vec![
            block2(prefix, "weight", &self.weight),
            block1(prefix, "bias", &self.bias),
        ]
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<ParamBlockMut<'_>> {
        vec![
            block2_mut(prefix, "weight", &mut self.weight),
            block1_mut(prefix, "bias", &mut self.bias),
        ]
    }
}

/// Two dense layers with an activation in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub hidden: Dense,
    pub output: Dense,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Mlp2Trace {
    pub input: Array1<f64>,
    pub pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub output: Array1<f64>,
}

impl Mlp2 {
    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        Mlp2 {
            hidden: Dense::zeros(input, hidden),
            output: Dense::zeros(hidden, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn forward(&self, x: Array1<f64>) -> Mlp2Trace {
        let pre = self.hidden.forward(x.view());
        let hidden = pre.mapv(|v| self.activation.apply(v));
        let output = self.output.forward(hidden.view());
        Mlp2Trace {
            input: x,
            pre,
            hidden,
            output,
        }
    }

    pub fn backward(&self, trace: &Mlp2Trace, dout: ArrayView1<f64>, grad: &mut Mlp2) -> Array1<f64> {
        let dh = self
            .output
            .backward(trace.hidden.view(), dout, &mut grad.output);
        let dpre = ndarray::Zip::from(&dh)
            .and(&trace.pre)
            .and(&trace.hidden)
            .map_collect(|&g, &x, &y| g * self.activation.derivative(x, y));
        self.hidden
            .backward(trace.input.view(), dpre.view(), &mut grad.hidden)
    }

    pub fn init(&mut self, seed: u64, prefix: &str) {
        self.hidden.init(seed, &format!("{prefix}.hidden"));
        self.output.init(seed, &format!("{prefix}.output"));
    }
}

impl Parameterized for Mlp2 {
    fn blocks(&self, prefix: &str) -> Vec<ParamBlock<'_>> {
        let mut out = self.hidden.blocks(&format!("{prefix}.hidden"));
        out.extend(self.output.blocks(&format!("{prefix}.output")));
        out
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<ParamBlockMut<'_>> {
        let mut out = self.hidden.blocks_mut(&format!("{prefix}.hidden"));
        out.extend(self.output.blocks_mut(&format!("{prefix}.output")));
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
