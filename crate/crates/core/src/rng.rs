//! Seeded random streams.
//!
//! Every run derives its own ChaCha stream from `base_seed + run_index`, so
//! runs can execute in any order (or concurrently) and still reproduce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Generator for run `index` under `base_seed`.
pub fn run_rng(base_seed: u64, index: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(index))
}

/// Independent sub-stream of a run, e.g. for noise that must not perturb the
/// draws used to build the distributions.
pub fn sub_rng(base_seed: u64, index: u64, stream: u64) -> RunRng {
    let mut rng = run_rng(base_seed, index);
    rng.set_stream(stream);
    rng
}
