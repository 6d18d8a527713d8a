//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed, a purpose tag, and an index, so results never depend on the order
//! in which unrelated components draw numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

pub const INIT: u64 = 1;
pub const SYNTH: u64 = 2;
pub const SHUFFLE: u64 = 3;
pub const NOISE: u64 = 4;
pub const EVAL: u64 = 5;
pub const DONOR: u64 = 6;
pub const INFER: u64 = 7;

pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Tensor of independent standard normal draws.
pub fn normal_tensor<R: rand::Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}
