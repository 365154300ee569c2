//! Shared generators for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fdd_core::{FeatureSet, Tensor};

/// Uniform [-1, 1) tensor with a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(data, shape).expect("shape matches data")
}

/// N×D feature set with standard-normal-ish entries.
pub fn random_features(n: usize, d: usize, seed: u64) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    FeatureSet::new(data, n, d).expect("dimensions consistent")
}
