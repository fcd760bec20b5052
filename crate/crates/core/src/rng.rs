//! Seeded random streams.
//!
//! Every consumer of randomness receives its own stream derived from the run
//! seed plus a path of tags, so work items can be reordered or parallelized
//! without changing any result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`; distinct tag paths give unrelated values.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |h, &t| splitmix(h ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(seed, tags))
}

/// FNV-1a hash of a string, for turning names into stream tags.
pub fn tag_of(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Forks an independent child stream from `rng`.
pub fn fork(rng: &mut impl Rng) -> Stream {
    Stream::seed_from_u64(rng.next_u64())
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}
