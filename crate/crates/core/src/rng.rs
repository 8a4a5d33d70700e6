//! Seeded random streams.
//!
//! All randomness is ChaCha8. Batch operations give element `i` its own stream
//! so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// A generator seeded from `seed`.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The `index`-th independent stream under `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed for a named sub-task, so that e.g. the dev and test
/// benchmark generators never share a stream.
pub fn derive(seed: u64, label: &str) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write_u64(seed);
    h.write(label.as_bytes());
    h.finish()
}
