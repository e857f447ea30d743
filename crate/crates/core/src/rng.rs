//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, stream)`; the block counter inside ChaCha is the third coordinate.
//! Replicate `i` of a Monte Carlo job always reads stream `i`, so results do
//! not depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream offset used for calibration draws, disjoint from replicate streams.
pub const CALIBRATION_STREAM_BASE: u64 = 1 << 40;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
