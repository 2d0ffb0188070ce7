//! Named, seeded random sub-streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! master seed, a stream name (`"env"`, `"agent"`, `"her"`, `"demo"`, ...) and
//! an index. Streams are independent, so perturbing one component never shifts
//! the draws seen by another, and per-trial streams make parallel fan-out
//! produce the same results as a serial loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for the `index`-th member of stream `name`.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(name) ^ splitmix64(index)))
}

pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name, index))
}
