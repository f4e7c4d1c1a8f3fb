//! Seed derivation for independent deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and index into a child seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn stream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Stream tags keep unrelated consumers of one master seed apart.
pub mod tags {
    pub const PROTOTYPES: u64 = 1;
    pub const TEXTURES: u64 = 2;
    pub const PATCH_PROJECTION: u64 = 3;
    pub const SCENE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const BATCH: u64 = 6;
    pub const VIEW: u64 = 7;
    pub const PHOTOMETRIC: u64 = 8;
    pub const NEGATIVES: u64 = 9;
    pub const GRADCHECK: u64 = 10;
}
