//! Deterministic random streams.
//!
//! Every trial draws from its own ChaCha12 stream. The key comes from the
//! master seed and the stream id is a hash of the trial path, so results do
//! not depend on the order in which trials are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a path of identifiers into a single 64-bit value.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator seeded directly from `seed`, stream 0.
pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Substream of `master` addressed by `path`, e.g. `&[lambda_index, trial]`.
pub fn substream(master: u64, path: &[u64]) -> Rng {
    let mut rng = Rng::seed_from_u64(master);
    rng.set_stream(derive_seed(master, path));
    rng
}
