//! Keyed random streams.
//!
//! Every stochastic decision in the ecology draws from a stream derived from
//! `(master_seed, tick, subject, phase)`, so results do not depend on how many
//! other units exist or on the order worker threads finish.

use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use sha2::{Digest, Sha256};

/// What a keyed stream is used for. Distinct phases never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Founder = 1,
    Placement = 2,
    Weather = 3,
    Reproduction = 4,
    Migration = 5,
    Sampling = 6,
    Oracle = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(words: &[u64]) -> [u8; 32] {
    let mut state = 0x6A09_E667_F3BC_C908u64;
    let mut seed = [0u8; 32];
    for (lane, chunk) in seed.chunks_mut(8).enumerate() {
        for &w in words {
            state = splitmix64(state ^ w);
        }
        state = splitmix64(state ^ lane as u64);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    seed
}

/// Fast deterministic stream for simulation decisions.
pub fn keyed(master_seed: u64, tick: u64, subject: u64, phase: Phase) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(mix(&[master_seed, tick, subject, phase as u64]))
}

/// Cryptographically seeded stream for incompressible noise. The key is a
/// SHA-256 digest so no structure of the inputs survives into the output.
pub fn noise_stream(master_seed: u64, tick: u64, cell: u64) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"mee-noise");
    hasher.update(master_seed.to_le_bytes());
    hasher.update(tick.to_le_bytes());
    hasher.update(cell.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    ChaCha20Rng::from_seed(seed)
}
