//! Named deterministic RNG sub-streams.
//!
//! Every random choice in the toolkit draws from a stream derived from one
//! master seed plus a label, so enabling or disabling one stage never
//! perturbs the randomness of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// 64-bit FNV-1a over the label bytes.
fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the sub-seed for `label` under `master`.
pub fn derive(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a(label))
}

/// RNG for the named stream.
pub fn stream(master: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, label))
}

/// Sub-seed for the `index`-th member of a named stream family (HPO
/// members, parallel workers). Serial and parallel execution see identical
/// streams.
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(master, label) ^ splitmix64(index))
}

/// RNG for the `index`-th member of a named stream family.
pub fn indexed_stream(master: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_indexed(master, label, index))
}
