use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{Scalar, Tensor5};

/// Seeded generator for weight initialization. Xoshiro256++ output is
/// specified bit-for-bit, so a seed yields the same weights on every platform.
#[derive(Debug, Clone)]
pub struct InitRng(Xoshiro256PlusPlus);

impl InitRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn inner(&mut self) -> &mut Xoshiro256PlusPlus {
        &mut self.0
    }
}

/// Kaiming-uniform fill: `U(-b, b)` with `b = sqrt(6 / fan_in)`. Values are
/// drawn in `f64` and rounded, so `f32` and `f64` models from one seed agree.
pub fn kaiming_uniform<T: Scalar>(rng: &mut InitRng, dims: [usize; 5], fan_in: usize) -> Tensor5<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor5::from_fn(dims, |_| T::from_f64_lossy(rng.uniform(-bound, bound)))
}
