//! Counter-based seed derivation.
//!
//! Every random stream is keyed by `(master, run, agent, kind)` and hashed with
//! SplitMix64 finalisers, so a stream's contents never depend on which worker
//! consumes it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams used by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamKind {
    Scenario = 1,
    Task = 2,
    Regressor = 3,
    MeasurementNoise = 4,
    PrivacyNoise = 5,
    Auxiliary = 6,
}

const fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit ChaCha key for the given coordinates.
pub fn derive_seed(master: u64, run: u64, agent: u64, kind: StreamKind) -> [u8; 32] {
    let mut h = mix(master);
    h = mix(h ^ run);
    h = mix(h ^ agent.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = mix(h ^ (kind as u64));
    let mut out = [0u8; 32];
    let mut s = h;
    for chunk in out.chunks_mut(8) {
        s = mix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn stream(master: u64, run: u64, agent: u64, kind: StreamKind) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master, run, agent, kind))
}
