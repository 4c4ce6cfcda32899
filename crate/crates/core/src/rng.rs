//! Per-path random streams derived from a single root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for path `path` under root seed `seed`.
///
/// Paths use disjoint ChaCha streams, so any subset of paths can be replayed
/// alone and batches can run in any order.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}
