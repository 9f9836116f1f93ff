//! Seed derivation. Every random draw in a run comes from a ChaCha stream keyed
//! by `(seed, purpose)`, so adding or reordering work never shifts another
//! component's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    RewardModel = 1,
    Partition = 2,
    Log = 3,
    Split = 4,
    Evaluation = 5,
    Training = 6,
    Fixture = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed of replicate `index` under a base seed.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    base.wrapping_add(index)
}
