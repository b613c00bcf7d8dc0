//! Deterministic per-replicate random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream for replicate `index` of the experiment labelled `tag`.
///
/// The key is a hash of `(master, tag)`; the replicate index selects the
/// ChaCha stream, so streams never overlap.
pub fn stream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(tag)));
    rng.set_stream(index);
    rng
}

/// Tags used by the experiments, kept distinct so that their replicates
/// never share randomness.
pub mod tags {
    pub const CPP: u64 = 1;
    pub const FORWARD: u64 = 2;
    pub const JOINT: u64 = 3;
    pub const EHH: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const LAW: u64 = 6;
}
