//! Deterministic seed derivation for per-item rng streams.

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hash a tuple of seed parts into one stream seed.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3;
    for p in parts {
        acc = splitmix(acc ^ *p);
    }
    acc
}
