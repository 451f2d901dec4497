//! Seeded, splittable randomness on top of ChaCha20.
//!
//! A [`SeededRng`] is a `(seed, stream)` pair. ChaCha20 is a counter-based
//! generator: the seed fixes the key, the stream id selects an independent
//! keystream, and the word position is the counter. Splitting hands out a new
//! stream id, so children never alias the parent or each other.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// Generator identifier recorded alongside seeds in provenance records.
pub const GENERATOR_ID: &str = "chacha20-stream-v1";

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    splits: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        for (i, chunk) in key.chunks_mut(8).enumerate() {
            chunk.copy_from_slice(&splitmix64(seed ^ (i as u64).wrapping_mul(0xa076_1d64_78bd_642f)).to_le_bytes());
        }
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            splits: 0,
            inner,
        }
    }

    /// A generator addressed by a path of labels under `seed`, independent of
    /// any call history. `derive(s, &[stage, item])` is how per-item streams
    /// are obtained so that items can be produced in any order.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut stream = 0x5eed_u64;
        for &label in path {
            stream = splitmix64(stream ^ splitmix64(label));
        }
        Self::with_stream(seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Returns a child stream. The parent's own sequence is unaffected.
    pub fn split(&mut self) -> SeededRng {
        self.splits += 1;
        let child = splitmix64(self.stream ^ splitmix64(self.splits).rotate_left(17));
        Self::with_stream(self.seed, child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.standard_normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }

    /// Index drawn from non-negative weights (need not be normalized).
    /// Returns `None` when every weight is zero.
    pub fn weighted_index(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = self.uniform() * total;
        let mut last = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last = Some(i);
            if u < w {
                return Some(i);
            }
            u -= w;
        }
        last
    }
}

/// Standard-normal tensor drawn from `rng`.
pub fn seeded_normal(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    rng.normal(shape)
}
