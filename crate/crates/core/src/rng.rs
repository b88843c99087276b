//! Reproducible random streams.
//!
//! Every replication owns a ChaCha20 stream keyed by the experiment seed and
//! selected by the replication index, so replications can run in any order
//! or on any thread and still draw the same numbers.

use rand::SeedableRng;
pub use rand_chacha::ChaCha20Rng;

/// Stream index reserved for objects shared by all replications (e.g. a fixed network).
pub const SHARED_STREAM: u64 = u64::MAX;

pub fn replication_rng(seed: u64, replication: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}
