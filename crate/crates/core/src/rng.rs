//! Deterministic random streams.
//!
//! Every stream is a PCG64 generator whose state and increment come from a
//! splitmix64 expansion of a tuple of 64-bit keys, so that e.g. the record
//! stream for `(seed, split, index)` does not depend on generation order.

pub use rand::RngExt;
pub use rand_pcg::Pcg64;

/// One splitmix64 step.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds an independent generator for the given key tuple.
pub fn stream(keys: &[u64]) -> Pcg64 {
    let mut sm = 0x5053_4e4f_u64;
    for &k in keys {
        sm ^= k;
        sm = splitmix64(&mut sm);
    }
    let a = splitmix64(&mut sm) as u128;
    let b = splitmix64(&mut sm) as u128;
    let c = splitmix64(&mut sm) as u128;
    let d = splitmix64(&mut sm) as u128;
    Pcg64::new((a << 64) | b, (c << 64) | d)
}

/// FNV-1a over a string, used to key parameter streams by name.
pub fn name_key(name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Uniform draw on `[lo, hi)`; returns `lo` for a zero-width interval.
pub fn uniform(rng: &mut Pcg64, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + (hi - lo) * u
}
