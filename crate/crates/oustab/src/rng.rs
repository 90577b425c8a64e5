//! Deterministic substream derivation. Every Monte Carlo sample owns a
//! ChaCha stream derived from (seed, sample index, lane), so estimates are
//! bitwise reproducible regardless of thread count, and the jump-time and
//! Gaussian components of one sample stay independent even when a sweep
//! reuses the seed across epsilon values (common random numbers).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lanes per sample. Lane 0 drives Poisson jump times, lane 1 the stochastic
/// convolution; the rest are reserved.
pub const LANES: u64 = 4;

pub fn substream(seed: u64, sample: u64, lane: u64) -> ChaCha8Rng {
    debug_assert!(lane < LANES);
    let mut rng = ChaCha8Rng::from_seed(expand_seed(seed));
    rng.set_stream(sample.wrapping_mul(LANES).wrapping_add(lane));
    rng
}

/// SplitMix64 expansion of a 64-bit seed into a 256-bit ChaCha key.
fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}
