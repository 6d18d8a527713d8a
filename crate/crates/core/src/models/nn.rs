use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization.
pub(crate) fn init_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let w = store.add(format!("{name}.w"), init_uniform(rng, &[fan_in, fan_out], fan_in));
        let b = store.add(format!("{name}.b"), init_uniform(rng, &[fan_out], fan_in));
        Dense { w, b, fan_in, fan_out }
    }

    /// Zero weights and bias.
    pub fn new_zero(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Dense { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Stride-2 convolution halving the length: kernel 3, padding 1.
#[derive(Debug, Clone)]
pub struct DownConv {
    pub w: ParamId,
    pub b: ParamId,
}

impl DownConv {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, c_in: usize, c_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), init_uniform(rng, &[c_out, c_in, 3], c_in * 3));
        let b = store.add(format!("{name}.b"), init_uniform(rng, &[c_out], c_in * 3));
        DownConv { w, b }
    }

    pub fn out_len(l: usize) -> usize {
        (l + 2 - 3) / 2 + 1
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, b, 2, 1)
    }
}

/// Transposed convolution doubling the length: kernel 4, stride 2,
/// padding 1.
#[derive(Debug, Clone)]
pub struct UpConv {
    pub w: ParamId,
    pub b: ParamId,
}

impl UpConv {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, c_in: usize, c_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), init_uniform(rng, &[c_in, c_out, 4], c_in * 2));
        let b = store.add(format!("{name}.b"), init_uniform(rng, &[c_out], c_in * 2));
        UpConv { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv_transpose1d(x, w, b, 2, 1)
    }
}
