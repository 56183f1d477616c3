//! Seeded random substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for item `index` under `seed`; output does not
/// depend on how many other substreams were drawn or in which order.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
