//! Seeded sampling. Every draw goes through a ChaCha stream keyed by an
//! explicit 64-bit seed, so identical seeds give bit-identical tensors.

use rand::distributions::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream label (splitmix64 finalizer) so that
/// independent consumers never share a random stream.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard Gumbel transform of a uniform draw.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn gumbel(rng: &mut Rng) -> f64 {
    let u: f64 = Open01.sample(rng);
    gumbel_from_uniform(u)
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sample_gumbel(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| gumbel(&mut r))
}

pub fn sample_gaussian(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| gaussian(&mut r))
}

/// Index of the Gumbel-max draw over `log_probs`.
pub fn gumbel_argmax(log_probs: &[f64], rng: &mut Rng) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, &lp) in log_probs.iter().enumerate() {
        let v = lp + gumbel(rng);
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}
