//! Seeded random number helpers. All randomness in the crate flows through
//! a `ChaCha8` stream derived from an explicit `u64` seed.

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tensor with entries drawn uniformly from `[-half_range, half_range)`.
pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], half_range: f64) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len)
        .map(|_| rng.gen_range(-half_range..half_range))
        .collect();
    Tensor::from_vec(shape, data).expect("length computed from shape")
}
