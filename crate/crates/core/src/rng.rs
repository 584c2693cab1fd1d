//! Counter-based random streams. Every draw is keyed by `(seed, purpose, index)`
//! so work can be split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha20 generator whose key depends on `seed` and `purpose` and whose
/// stream id is `index`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    let mut s = seed ^ fnv1a(purpose).rotate_left(17);
    for chunk in key.chunks_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
