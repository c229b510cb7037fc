//! Independent ChaCha streams addressed by a fixed tuple of integers, so the
//! numbers drawn for a piece of work never depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const INCHWORM: u64 = 0x696e_6368;
pub(crate) const DYSON: u64 = 0x6479_736f;
pub(crate) const VARIANCE: u64 = 0x7661_7269;

/// Samples per stream chunk; chunks are the unit of parallel work.
pub(crate) const CHUNK: usize = 2048;

pub(crate) fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Splits `total` samples into (chunk index, chunk size) pieces.
pub(crate) fn chunks(total: usize) -> impl Iterator<Item = (u64, usize)> {
    (0..total.div_ceil(CHUNK)).map(move |c| (c as u64, CHUNK.min(total - c * CHUNK)))
}
