//! Seed derivation: every random stream is a pure function of a base seed and a path.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent substream `index` of `stream` under `base`.
// Out of line: inlined into `(0..n).map(..).collect()` it stalls LLVM's loop vectorizer.
#[inline(never)]
pub fn derive(base: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix(base);
    for b in stream.bytes() {
        h = mix(h ^ b as u64);
    }
    mix(h ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        assert_eq!(derive(1, "clip", 0), derive(1, "clip", 0));
        assert_ne!(derive(1, "clip", 0), derive(1, "clip", 1));
        assert_ne!(derive(1, "clip", 0), derive(1, "chunk", 0));
        assert_ne!(derive(1, "clip", 0), derive(2, "clip", 0));
    }
}
