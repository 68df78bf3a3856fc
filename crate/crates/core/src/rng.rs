//! Seeded random streams.
//!
//! Every stochastic routine takes a caller-owned [`ChainRng`], which is
//! ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`) seeded from a `u64` via
//! `SeedableRng::seed_from_u64`. The stream is platform independent, so traces
//! reproduce bit-for-bit given the seed. Chain `j` of a multi-chain run uses
//! seed `base_seed + j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of chain `index` in a run with base seed `base`.
pub fn chain_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}
