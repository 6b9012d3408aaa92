//! Seed derivation.
//!
//! Every random stream is a ChaCha20 generator keyed by a 64-bit seed that is
//! derived from the run seed, a string label and an integer index
//! (replication, fold, grid cell). Streams with different `(label, index)`
//! pairs are independent; the same triple always yields the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(label.as_bytes())).wrapping_add(splitmix64(index)))
}

pub fn labeled_rng(seed: u64, label: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(seed, label, index))
}
