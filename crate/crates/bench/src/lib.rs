//! Fixtures shared by the benchmarks.

use dsa_core::{Correlation, Environment, Topology, TransitionMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The 24-channel, 8-wide, demand-4 setting with `i` independent channels.
pub fn standard_env(i: usize, seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = Topology::random(24, i, Correlation::Opposite, &mut rng).expect("valid topology");
    let m = TransitionMatrix::from_stay(0.95, 0.95).expect("valid matrix");
    Environment::new(8, 4, m, topo, seed).expect("valid environment")
}
