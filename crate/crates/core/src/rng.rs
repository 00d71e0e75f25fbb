//! Seed discipline: every random consumer draws from a named sub-stream of the
//! master seed, so adding or reordering one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams used by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Scheme,
    Shuffle,
    Augment,
    Dropout,
    Eval,
    Calibration,
}

impl Stream {
    fn tag(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Scheme => "scheme",
            Stream::Shuffle => "shuffle",
            Stream::Augment => "augment",
            Stream::Dropout => "dropout",
            Stream::Eval => "eval",
            Stream::Calibration => "calibration",
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for `(master seed, stream, indices...)`.
pub fn stream(master: u64, which: Stream, indices: &[u64]) -> Rng {
    let mut key = splitmix64(master ^ fnv1a(which.tag().bytes()));
    for &i in indices {
        key = splitmix64(key ^ splitmix64(i));
    }
    let mut seed = [0u8; 32];
    for (chunk_idx, chunk) in seed.chunks_mut(8).enumerate() {
        key = splitmix64(key.wrapping_add(chunk_idx as u64));
        chunk.copy_from_slice(&key.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
