//! Deterministic random streams keyed by `(experiment seed, round, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Reserved round index for streams that are not tied to an SNPE round
/// (observation generation, evaluation, dataset export).
pub const AUX_ROUND: u64 = u64::MAX;

/// A reproducible generator addressed by an index tuple.
///
/// The ChaCha key is built from the three indices through SplitMix64, so
/// distinct tuples give unrelated key material and the same tuple always
/// reproduces the same draws on every platform.
pub type RngStream = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, round: u64, index: u64) -> RngStream {
    let mut key = [0u8; 32];
    let a = splitmix64(seed);
    let b = splitmix64(a ^ splitmix64(round.wrapping_add(0x5851_F42D_4C95_7F2D)));
    let c = splitmix64(b ^ splitmix64(index.wrapping_add(0x1405_7B7E_F767_814F)));
    let d = splitmix64(c ^ 0xD1B5_4A32_D192_ED03);
    for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Named sub-streams used throughout a run; keeps index assignments in one place.
pub mod purpose {
    pub const OBSERVATION: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PROPOSAL: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const ATOMS: u64 = 7;
    pub const VALIDATION: u64 = 8;
    pub const EVALUATION: u64 = 9;
    pub const POSTERIOR: u64 = 10;
    /// Simulation streams start here; simulation `i` uses `SIMULATION + i`.
    pub const SIMULATION: u64 = 1 << 32;
}
