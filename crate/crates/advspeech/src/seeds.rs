//! Deterministic seed derivation for per-attack and per-clip RNG streams.
//!
//! Seeds are mixed with splitmix64 so the result is stable across platforms
//! and independent of iteration order.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string.
pub fn hash_str(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Folds a sequence of words into one seed.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &p in parts {
        s = splitmix64(s ^ p);
    }
    s
}
