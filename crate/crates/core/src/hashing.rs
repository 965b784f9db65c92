//! Seeded 64-bit string hashing used for feature hashing and manifests.
//!
//! The exact function is pinned by golden-vector fixtures in the embedder
//! tests: changing anything here invalidates every persisted index.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// MurmurHash3 64-bit finalizer.
#[inline]
pub fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// SplitMix64 step; used to derive salts and per-sample seeds.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over `bytes`, with the seed folded into the offset basis, then
/// finalized with `fmix64` so that low bits are well mixed.
pub fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ fmix64(seed);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    fmix64(h)
}

/// Combine two seeds into one, order-sensitive.
#[inline]
pub fn mix_seeds(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

pub fn hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", hash64(0, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_changes_hash() {
        assert_ne!(hash64(0, b"retrieval"), hash64(1, b"retrieval"));
        assert_eq!(hash64(7, b"retrieval"), hash64(7, b"retrieval"));
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix_seeds(1, 2), mix_seeds(2, 1));
    }
}
