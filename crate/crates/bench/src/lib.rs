//! Shared fixtures for the criterion benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use fedpob_core::{SymMatrix, Vector};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn random_vec(dim: usize, gen: &mut ChaCha12Rng) -> Vector {
    Vector::from_vec((0..dim).map(|_| gen.random::<f64>() * 2.0 - 1.0).collect())
}

/// Well-conditioned PD matrix shaped like a mid-run information matrix.
pub fn information_matrix(dim: usize, observations: usize, gen: &mut ChaCha12Rng) -> SymMatrix {
    let mut m = SymMatrix::scaled_identity(dim, 1.0);
    for _ in 0..observations {
        m.add_assign_rank_one(&random_vec(dim, gen)).unwrap();
    }
    m
}
