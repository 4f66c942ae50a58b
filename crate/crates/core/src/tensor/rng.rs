use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Shape, Tensor};

/// Seedable counter-based stream (ChaCha8). Given a seed, every draw is the
/// same on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `seed` and a stream id.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { inner }
    }

    pub fn gaussian(&mut self) -> f32 {
        let v: f64 = StandardNormal.sample(&mut self.inner);
        v as f32
    }

    pub fn gaussian_tensor(&mut self, shape: Shape) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.gaussian()).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }
}
