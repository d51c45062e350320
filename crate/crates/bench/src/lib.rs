//! Shared fixtures for the operator benchmarks.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use scalim_core::assembly::{Model, ModelConfig, SizeCaps};

/// Default-shaped model with a denser lattice for kinetic benchmarks.
pub fn bench_model(n_x: usize, n_k: usize, n_max: usize) -> Model {
    Model::new(ModelConfig {
        n_x,
        n_k,
        n_max,
        caps: SizeCaps {
            dense_dim: 1 << 16,
            ..SizeCaps::default()
        },
        ..ModelConfig::default()
    })
    .expect("bench config valid")
}

pub fn random_state(dim: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    (0..dim)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}
