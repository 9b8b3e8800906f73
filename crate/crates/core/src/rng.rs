//! Seed derivation. Every random stream in the crate comes from a
//! `(seed, stage, index)` triple so that partial pipelines can be replayed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// FNV-1a
fn hash_stage(stage: &str) -> u64 {
    stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    let a = splitmix64(seed ^ hash_stage(stage));
    splitmix64(a ^ splitmix64(index))
}

pub fn stream(seed: u64, stage: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stage, index))
}
