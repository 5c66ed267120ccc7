//! Deterministic random streams.
//!
//! Every consumer of randomness owns a `ChaCha8Rng` seeded from a key that is
//! derived from a base seed plus a list of integer labels. Two streams with
//! different labels are statistically independent, and the same labels
//! always give the same stream regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `labels` into `base`. Order of labels matters.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix(base), |acc, &l| splitmix(acc ^ splitmix(l)))
}

pub fn stream(base: u64, labels: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(base, labels))
}

/// Stable label for a short tag string.
pub fn tag(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}
